"""Distances on [0, 1]^N and Monte Carlo summaries of coupled replicas.

Any coupling upper-bounds the infimum in the Wasserstein definition, and
``P[X != Z]`` upper-bounds total variation, so the replica means reported
here are upper estimates of the corresponding distances between laws.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import NeighborhoodGraph

CSV_HEADER = ["t", "mean_d", "se_d", "mean_dhat", "se_dhat", "frac_neq", "se_frac"]


def _pair(x, z):
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {z.shape}")
    return x, z


def weighted_l1(x, z, graph: NeighborhoodGraph):
    """``sum_i n_i |x_i - z_i|`` along the last axis.

    Sites of degree 0 do not contribute, so on graphs with isolated sites
    this is only a pseudometric.
    """
    x, z = _pair(x, z)
    if x.shape[-1] != graph.num_sites:
        raise ValueError("state length does not match the graph")
    return np.abs(x - z) @ graph.degrees.astype(np.float64)


def taxicab(x, z):
    x, z = _pair(x, z)
    return np.abs(x - z).sum(axis=-1)


@dataclass(frozen=True)
class PairSummary:
    t: int
    mean_weighted_d: float
    se_weighted_d: float
    mean_taxicab: float
    se_taxicab: float
    noncoalesced_fraction: float
    se_noncoalesced: float
    replica_count: int

    def csv_row(self) -> list:
        return [
            self.t,
            repr(self.mean_weighted_d),
            repr(self.se_weighted_d),
            repr(self.mean_taxicab),
            repr(self.se_taxicab),
            repr(self.noncoalesced_fraction),
            repr(self.se_noncoalesced),
        ]


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = v.size
    mean = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return mean, se


def summarize_arrays(X: np.ndarray, Z: np.ndarray, graph: NeighborhoodGraph, t: int = 0) -> PairSummary:
    X = np.atleast_2d(X)
    Z = np.atleast_2d(Z)
    if X.shape[0] == 0:
        raise ValueError("no replicas to summarize")
    d = weighted_l1(X, Z, graph)
    dh = taxicab(X, Z)
    neq = np.any(X != Z, axis=1).astype(np.float64)
    md, sd = _mean_se(d)
    mh, sh = _mean_se(dh)
    mf, sf = _mean_se(neq)
    return PairSummary(t, md, sd, mh, sh, mf, sf, X.shape[0])


def summarize_pairs(pairs: Sequence, graph: NeighborhoodGraph) -> PairSummary:
    if not pairs:
        raise ValueError("no replicas to summarize")
    X = np.stack([p.x_chain.x for p in pairs])
    Z = np.stack([p.z_chain.x for p in pairs])
    return summarize_arrays(X, Z, graph, pairs[0].t)


def write_summary_csv(rows: Sequence[PairSummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.csv_row())


def metric_conversion_bounds(tv: float, d_hat_w: float, graph: NeighborhoodGraph) -> dict:
    """Distances implied by a TV value and a taxicab-Wasserstein value."""
    N = graph.num_sites
    return {
        "d_hat_w_from_tv": N * tv,
        "d_w_from_tv": graph.n_max * N * tv,
        "d_w_lower_from_d_hat_w": graph.n_min * d_hat_w,
        "d_w_upper_from_d_hat_w": graph.n_max * d_hat_w,
    }


@dataclass(frozen=True)
class DecayFit:
    rate: float
    rate_se: float
    window: tuple[int, int]
    points: int
    degenerate: bool

    def to_json(self) -> dict:
        return asdict(self)


def fit_decay_rate(ts, means, ses, snr: float = 10.0) -> DecayFit:
    """Least-squares fit of ``log mean ~ a + t log(rate)``.

    Only points whose mean exceeds ``snr`` standard errors are used, which
    keeps the Monte Carlo noise floor out of the fit.
    """
    ts = np.asarray(ts, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    ses = np.nan_to_num(np.asarray(ses, dtype=np.float64), nan=0.0)
    keep = (means > 0) & (means > snr * ses)
    # stop at the first point that drops under the floor
    if not keep.all():
        first_bad = int(np.argmin(keep))
        keep[first_bad:] = False
    if keep.sum() < 3:
        return DecayFit(math.nan, math.nan, (0, 0), int(keep.sum()), True)
    t, lm = ts[keep], np.log(means[keep])
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, lm, rcond=None)
    resid = lm - A @ coef
    dof = t.size - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    slope_se = math.sqrt(s2 / float(((t - t.mean()) ** 2).sum()))
    rate = math.exp(coef[1])
    return DecayFit(rate, rate * slope_se, (int(t[0]), int(t[-1])), int(t.size), False)
