"""Random-scan Gibbs sampler for the truncated-Gaussian image posterior.

Time counts single-site updates: one step picks a site uniformly at random
and redraws it from its full conditional.  Each step consumes one counter
block of the chain's stream: uniform 0 selects the site, uniform 1 drives
the inverse-CDF draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import truncnorm
from .graph import NeighborhoodGraph
from .model import ModelParams, conditional_mean, conditional_variances
from .rng import SeededStream, uniform_blocks

_CHUNK = 4096


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64).ravel()
        if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
            raise ValueError("chain state must lie in [0, 1]^N")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.t < 0:
            raise ValueError("iteration count must be nonnegative")


def sample_truncated_normal(mean, variance, u):
    """Inverse-CDF draw from Normal(mean, variance) restricted to [0, 1]."""
    out = truncnorm.quantile(mean, variance, u)
    return float(out) if np.ndim(out) == 0 else out


def select_sites(u, num_sites: int):
    return np.minimum((np.asarray(u) * num_sites).astype(np.intp), num_sites - 1)


def neighbor_sums(graph: NeighborhoodGraph, X: np.ndarray, sites: np.ndarray) -> np.ndarray:
    """Sum of neighbour values of ``sites[r]`` in row ``X[r]``."""
    R = X.shape[0]
    ext = np.concatenate([X, np.zeros((R, 1))], axis=1)
    return np.take_along_axis(ext, graph.padded_neighbors[sites], axis=1).sum(axis=1)


def site_conditionals(params: ModelParams, graph: NeighborhoodGraph, X: np.ndarray, sites: np.ndarray):
    """(mean, variance) arrays of the full conditionals at ``sites`` for each row of ``X``."""
    deg = graph.degrees[sites]
    mean = conditional_mean(params, deg, params.y[sites], neighbor_sums(graph, X, sites))
    return mean, conditional_variances(params, graph)[sites]


def ensemble_gibbs_step(X: np.ndarray, t: int, params, graph, key, replicas) -> np.ndarray:
    """Advance every row of ``X`` (in place) by one random-scan update at time ``t``.

    Returns the updated site of each row.
    """
    U = uniform_blocks(key, t, 0, replicas)
    sites = select_sites(U[:, 0], graph.num_sites)
    mean, var = site_conditionals(params, graph, X, sites)
    X[np.arange(X.shape[0]), sites] = truncnorm.quantile(mean, var, U[:, 1])
    return sites


def gibbs_step(state: ChainState, params: ModelParams, graph: NeighborhoodGraph, rng: SeededStream) -> ChainState:
    X = state.x.reshape(1, -1).copy()
    ensemble_gibbs_step(X, state.t, params, graph, rng.key, np.array([rng.replica]))
    return ChainState(X[0], state.t + 1)


@dataclass
class ChainRun:
    trace: list[ChainState]
    mean: np.ndarray
    final: ChainState = field(repr=False, default=None)

    def write_csv(self, path: str | Path) -> None:
        write_trace_csv(self.trace, path)


def run_chain(
    init: ChainState,
    steps: int,
    params: ModelParams,
    graph: NeighborhoodGraph,
    rng: SeededStream,
    record_every: int = 1,
) -> ChainRun:
    """Apply ``steps`` Gibbs updates; snapshot every ``record_every`` steps.

    ``mean`` is the ergodic average of the states after steps 1..steps (the
    initial state when ``steps == 0``), i.e. a posterior-mean restoration.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    params.check(graph)
    x = init.x.copy()
    t0 = init.t
    trace = [init]
    if steps == 0:
        return ChainRun(trace, x.copy(), init)

    var = conditional_variances(params, graph).tolist()
    adjacency = graph.adjacency
    inv_s2 = params.sigma**-2
    g2 = params.gamma**2
    prior_part = (inv_s2 * params.y).tolist()
    # ergodic average accumulated lazily: a site's value contributes for
    # every step during which it was held
    acc = np.zeros_like(x)
    held_since = np.zeros(x.size, dtype=np.int64)
    xs = x.tolist()
    for start in range(0, steps, _CHUNK):
        n = min(_CHUNK, steps - start)
        U = rng.uniforms(np.arange(t0 + start, t0 + start + n, dtype=np.uint64))
        sites = select_sites(U[:, 0], graph.num_sites).tolist()
        us = U[:, 1].tolist()
        for k in range(n):
            i = sites[k]
            s = 0.0
            for j in adjacency[i]:
                s += xs[j]
            m = var[i] * (prior_part[i] + g2 * s)
            new = truncnorm.quantile_scalar(m, var[i], us[k])
            step = start + k  # state x has been held for steps held_since[i]..step-1
            acc[i] += xs[i] * (step - held_since[i])
            held_since[i] = step
            xs[i] = new
            done = step + 1
            if done % record_every == 0 or done == steps:
                trace.append(ChainState(np.array(xs), t0 + done))
    x = np.array(xs)
    acc += x * (steps - held_since)
    final = ChainState(x, t0 + steps)
    if trace[-1].t != final.t:
        trace.append(final)
    return ChainRun(trace, acc / steps, final)


def degrade(x_true, sigma: float, rng) -> np.ndarray:
    """Add i.i.d. Normal(0, sigma^2) noise; the result is not clamped."""
    x_true = np.asarray(x_true, dtype=np.float64)
    if np.any((x_true < 0) | (x_true > 1)):
        raise ValueError("x_true must lie in [0, 1]^N")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    gen = rng.generator() if isinstance(rng, SeededStream) else rng
    return x_true + sigma * gen.standard_normal(x_true.shape)


def write_trace_csv(trace: list[ChainState], path: str | Path) -> None:
    n = trace[0].x.size if trace else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i}" for i in range(n)])
        for s in trace:
            w.writerow([s.t] + [repr(float(v)) for v in s.x])
