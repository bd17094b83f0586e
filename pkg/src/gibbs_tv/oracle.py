"""Independent reference computations used to check samplers and bounds.

Nothing here shares code paths with the samplers beyond the truncated
normal density/CDF primitives.  The discretised chain approximates the
continuous chain; it is meant for qualitative domination and shape checks,
not tight numerical agreement with the continuous process.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.integrate import simpson
from scipy.sparse.linalg import spsolve
from scipy.special import ndtr

from . import truncnorm
from .graph import NeighborhoodGraph
from .model import ModelParams, conditional_mean, conditional_variances

DEFAULT_GRID = 2**16 + 1
MAX_STATES = 100_000


def _crossings(m1, v1, m2, v2) -> list[float]:
    """Points of (0, 1) where the two truncated densities are equal."""
    c = (
        -0.5 * math.log(v1) - float(truncnorm.log_mass(m1, v1))
        + 0.5 * math.log(v2) + float(truncnorm.log_mass(m2, v2))
    )
    # log f1 - log f2 = A x^2 + B x + C
    A = -0.5 / v1 + 0.5 / v2
    B = m1 / v1 - m2 / v2
    C = -0.5 * m1 * m1 / v1 + 0.5 * m2 * m2 / v2 + c
    if abs(A) < 1e-14 * (abs(B) + abs(C) + 1):
        roots = [-C / B] if B != 0 else []
    else:
        disc = B * B - 4 * A * C
        if disc < 0:
            roots = []
        else:
            sq = math.sqrt(disc)
            q = -0.5 * (B + math.copysign(sq, B))
            roots = [q / A, C / q] if q != 0 else [-B / (2 * A)]
    return sorted(r for r in roots if 0 < r < 1)


def _simpson_pieces(fn, cuts, grid_points):
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n = max(101, int(grid_points * (hi - lo)) | 1)
        x = np.linspace(lo, hi, n)
        total += simpson(fn(x), x=x)
    return total


def numeric_tv_params(m1, v1, m2, v2, grid_points: int = DEFAULT_GRID) -> float:
    """``0.5 * integral_0^1 |f1 - f2|`` for two unit-interval truncated normals.

    Composite Simpson on pieces split at the density crossings, where the
    integrand has kinks.
    """
    if grid_points < 1000:
        raise ValueError("grid_points must be at least 1000")
    if m1 == m2 and v1 == v2:
        return 0.0
    cuts = [0.0, *_crossings(m1, v1, m2, v2), 1.0]

    def integrand(x):
        return np.abs(np.exp(truncnorm.logpdf(x, m1, v1)) - np.exp(truncnorm.logpdf(x, m2, v2)))

    return 0.5 * _simpson_pieces(integrand, cuts, grid_points)


def numeric_tv_truncated(fc1, fc2, grid_points: int = DEFAULT_GRID) -> float:
    return numeric_tv_params(fc1.mean, fc1.variance, fc2.mean, fc2.variance, grid_points)


def numeric_tv_normal(mu1: float, mu2: float, sigma: float, grid_points: int = 40001) -> float:
    """Quadrature TV between two same-variance normals on the real line."""
    if mu1 == mu2:
        return 0.0
    lo, hi = min(mu1, mu2) - 12 * sigma, max(mu1, mu2) + 12 * sigma
    mid = 0.5 * (mu1 + mu2)

    def integrand(x):
        a = np.exp(-0.5 * ((x - mu1) / sigma) ** 2)
        b = np.exp(-0.5 * ((x - mu2) / sigma) ** 2)
        return np.abs(a - b) / (sigma * math.sqrt(2 * math.pi))

    total = 0.0
    for a, b in ((lo, mid), (mid, hi)):
        x = np.linspace(a, b, grid_points)
        total += simpson(integrand(x), x=x)
    return 0.5 * total


def truncated_mean(mean, variance):
    """Closed-form mean of Normal(mean, variance) restricted to [0, 1]."""
    mean = np.asarray(mean, dtype=np.float64)
    s = np.sqrt(variance)
    a, b = -mean / s, (1 - mean) / s
    phi = lambda z: np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    return mean + s * (phi(a) - phi(b)) / (ndtr(b) - ndtr(a))


def coupon_collector_tail(N: int, M: int) -> float:
    """Exact ``P[theta > M]``, theta the time to see all ``N`` coupons.

    Inclusion-exclusion evaluated in exact integer arithmetic, then rounded
    once, so there is no cancellation error.
    """
    if N < 1 or M < 0:
        raise ValueError("need N >= 1 and M >= 0")
    if N == 1:
        return 0.0 if M >= 1 else 1.0
    if N.bit_length() * M > 50_000_000:
        return _coupon_tail_logspace(N, M)
    # k = N contributes only when M = 0 (0**0 == 1)
    num = sum((-1) ** (k + 1) * math.comb(N, k) * (N - k) ** M for k in range(1, N + 1))
    return num / N**M


def _coupon_tail_logspace(N: int, M: int) -> float:
    if M == 0:
        return 1.0
    terms = []
    for k in range(1, N):
        lt = math.lgamma(N + 1) - math.lgamma(k + 1) - math.lgamma(N - k + 1) + M * math.log1p(-k / N)
        terms.append((-1) ** (k + 1) * math.exp(lt))
    return min(1.0, max(0.0, math.fsum(terms)))


def simulate_coupon_collector(N: int, M: int, replicas: int, rng: np.random.Generator) -> float:
    """Fraction of replicas that have not seen every coupon after ``M`` draws."""
    seen = np.zeros((replicas, N), dtype=bool)
    rows = np.arange(replicas)
    for _ in range(M):
        seen[rows, rng.integers(0, N, size=replicas)] = True
    return float(np.mean(~seen.all(axis=1)))


@dataclass
class DiscretizedChain:
    """Random-scan Gibbs chain on ``levels^N`` cells of [0, 1]^N.

    A site update moves the site to cell ``k`` with the exact truncated
    normal probability of ``[k/L, (k+1)/L]``, the neighbour sum being taken
    at cell midpoints.
    """

    num_sites: int
    levels: int
    transition: sparse.csr_matrix
    _stationary: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_states(self) -> int:
        return self.levels**self.num_sites

    def state_index(self, x) -> int:
        cells = np.minimum((np.asarray(x, dtype=np.float64) * self.levels).astype(int), self.levels - 1)
        return int(np.ravel_multi_index(tuple(cells), (self.levels,) * self.num_sites))

    def point_mass(self, x) -> np.ndarray:
        mu = np.zeros(self.num_states)
        mu[self.state_index(x)] = 1.0
        return mu

    def step(self, mu: np.ndarray) -> np.ndarray:
        return self.transition.T @ mu

    @property
    def stationary(self) -> np.ndarray:
        if self._stationary is None:
            self._stationary = _stationary(self.transition)
        return self._stationary


def _stationary(P: sparse.csr_matrix, tol: float = 1e-12) -> np.ndarray:
    S = P.shape[0]
    A = (P.T - sparse.identity(S, format="csr")).tolil()
    A[S - 1, :] = np.ones(S)
    b = np.zeros(S)
    b[-1] = 1.0
    pi = spsolve(A.tocsr(), b)
    pi = np.clip(pi, 0, None)
    pi /= pi.sum()
    for _ in range(1000):
        nxt = P.T @ pi
        if np.abs(nxt - pi).sum() <= tol:
            return nxt
        pi = nxt
    return pi


def build_discretized_chain(params: ModelParams, graph: NeighborhoodGraph, levels: int) -> DiscretizedChain:
    N, L = graph.num_sites, levels
    if N > 3:
        raise ValueError("discretised oracle supports at most 3 sites")
    S = L**N
    if S > MAX_STATES:
        raise ValueError(f"state space of {S} cells exceeds the limit of {MAX_STATES}")
    params.check(graph)
    shape = (L,) * N
    digits = np.array(np.unravel_index(np.arange(S), shape))  # (N, S)
    values = (digits + 0.5) / L
    edges = np.arange(L + 1) / L
    var = conditional_variances(params, graph)
    rows, cols, data = [], [], []
    for i in range(N):
        nsum = sum((values[j] for j in graph.adjacency[i]), np.zeros(S))
        m = conditional_mean(params, graph.degrees[i], params.y[i], nsum)
        F = truncnorm.cdf(edges[None, :], m[:, None], var[i])
        probs = np.diff(F, axis=1)
        probs /= probs.sum(axis=1, keepdims=True)
        stride = L ** (N - 1 - i)
        base = np.arange(S) - digits[i] * stride
        dest = base[:, None] + np.arange(L)[None, :] * stride
        rows.append(np.repeat(np.arange(S), L))
        cols.append(dest.ravel())
        data.append(probs.ravel() / N)
    P = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)
    )
    P.sum_duplicates()
    return DiscretizedChain(N, L, P)


def discretized_chain_exact_tv(
    params: ModelParams, graph: NeighborhoodGraph, levels: int, init1, init2, t_max: int
) -> np.ndarray:
    """``0.5 * ||mu1_t - mu2_t||_1`` for t = 0..t_max, from two point masses."""
    chain = build_discretized_chain(params, graph, levels)
    mu1, mu2 = chain.point_mass(init1), chain.point_mass(init2)
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = 0.5 * np.abs(mu1 - mu2).sum()
        mu1, mu2 = chain.step(mu1), chain.step(mu2)
    return out


def write_tv_series_csv(tv, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "tv"])
        for t, v in enumerate(tv):
            w.writerow([t, repr(float(v))])


def two_site_cell_probabilities(params: ModelParams, bins: int, grid: int = 2001) -> np.ndarray:
    """Posterior mass of each ``bins x bins`` cell for the two-site path model.

    The inner coordinate is integrated in closed form, the outer one by
    Simpson's rule, so this is independent of any Markov chain.
    """
    if params.num_sites != 2:
        raise ValueError("two-site model required")
    g2, inv = params.gamma**2, params.sigma**-2
    y1, y2 = params.y
    prec = inv + g2
    sd = prec**-0.5
    edges = np.linspace(0, 1, bins + 1)
    out = np.zeros((bins, bins))
    for a in range(bins):
        x1 = np.linspace(edges[a], edges[a + 1], grid)
        m2 = (inv * y2 + g2 * x1) / prec
        # exponent after completing the square in x2
        log_w = -0.5 * inv * (x1 - y1) ** 2 - 0.5 * (inv * y2**2 + g2 * x1**2) + 0.5 * prec * m2**2
        w = np.exp(log_w) * sd * math.sqrt(2 * math.pi)
        F = ndtr((edges[None, :] - m2[:, None]) / sd)
        cell = np.diff(F, axis=1) * w[:, None]
        out[a] = simpson(cell, x=x1, axis=0)
    return out / out.sum()
