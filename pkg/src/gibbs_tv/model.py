"""Prior, posterior and full conditionals of the truncated-Gaussian image model.

The posterior on ``[0, 1]^N`` is proportional to::

    exp(-sum_i (x_i - y_i)^2 / (2 sigma^2) - sum_<i,j> (gamma (x_i - x_j))^2 / 2)

and each full conditional is a normal restricted to ``[0, 1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import NeighborhoodGraph


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    sigma: float
    y: np.ndarray

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        y = np.array(self.y, dtype=np.float64).ravel()
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def num_sites(self) -> int:
        return self.y.size

    def check(self, graph: NeighborhoodGraph) -> None:
        if self.y.size != graph.num_sites:
            raise ValueError(f"y has {self.y.size} entries but the graph has {graph.num_sites} sites")

    def to_json(self) -> dict:
        return {"gamma": self.gamma, "sigma": self.sigma, "y": self.y.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelParams":
        return cls(gamma=doc["gamma"], sigma=doc["sigma"], y=doc["y"])


def load_params(path: str | Path) -> ModelParams:
    with open(path) as fh:
        return ModelParams.from_json(json.load(fh))


@dataclass(frozen=True)
class FullConditional:
    """Normal(mean, variance) restricted to [0, 1] at one site."""

    site: int
    mean: float
    variance: float


def conditional_variances(params: ModelParams, graph: NeighborhoodGraph) -> np.ndarray:
    return 1.0 / (params.sigma**-2 + graph.degrees * params.gamma**2)


def conditional_mean(params: ModelParams, degree, y_i, neighbor_sum):
    """Mean of the untruncated conditional normal; broadcasts over arrays."""
    prec = params.sigma**-2 + degree * params.gamma**2
    return (params.sigma**-2 * y_i + params.gamma**2 * neighbor_sum) / prec


def full_conditional(params: ModelParams, graph: NeighborhoodGraph, x, i: int) -> FullConditional:
    x = np.asarray(x, dtype=np.float64)
    deg = int(graph.degrees[i])
    s = graph.neighbor_sum(x, i)
    var = 1.0 / (params.sigma**-2 + deg * params.gamma**2)
    return FullConditional(i, float(conditional_mean(params, deg, params.y[i], s)), float(var))


def log_density_unnormalized(
    params: ModelParams, graph: NeighborhoodGraph, x, include_likelihood: bool = True
) -> float:
    """Unnormalised log prior (or posterior with ``include_likelihood``).

    Returns ``-inf`` outside ``[0, 1]^N``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (graph.num_sites,):
        raise ValueError(f"state has shape {x.shape}, expected ({graph.num_sites},)")
    if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
        return -np.inf
    edges = np.array(graph.edges(), dtype=np.intp).reshape(-1, 2)
    diffs = x[edges[:, 0]] - x[edges[:, 1]]
    out = -0.5 * params.gamma**2 * float(np.sum(diffs**2))
    if include_likelihood:
        params.check(graph)
        out -= float(np.sum((x - params.y) ** 2)) / (2 * params.sigma**2)
    return out


@dataclass(frozen=True)
class ThermoConstants:
    """Per-site mean bounds and conditional variances used by the TV bound."""

    zeta_i: np.ndarray
    zeta: float
    sigma_tilde_sq_i: np.ndarray
    sigma_tilde: float
    zeta_safe: float

    @property
    def sigma_tilde_sq(self) -> float:
        return self.sigma_tilde**2


def thermo_constants(params: ModelParams, graph: NeighborhoodGraph) -> ThermoConstants:
    # zeta_i uses gamma^2 * n_max in the numerator for every site, as in the
    # bound; zeta_safe additionally covers the zero-neighbour-sum mean, which
    # can have larger magnitude when y_i < 0.
    params.check(graph)
    var = conditional_variances(params, graph)
    zeta_i = var * (params.sigma**-2 * params.y + params.gamma**2 * graph.n_max)
    zeta = float(np.max(np.abs(zeta_i)))
    low_mean = np.abs(var * params.sigma**-2 * params.y)
    zeta_safe = float(np.max(np.maximum(low_mean, np.abs(zeta_i))))
    return ThermoConstants(
        zeta_i=zeta_i,
        zeta=zeta,
        sigma_tilde_sq_i=var,
        sigma_tilde=float(np.sqrt(np.min(var))),
        zeta_safe=zeta_safe,
    )
