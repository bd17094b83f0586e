"""Closed-form mixing-time bounds and the inequalities behind them.

Natural logarithms throughout.  Quantities that can overflow (the factor
``exp((zeta + 1)^2 / (2 sigma_tilde^2))`` in particular) are carried in log
space; vacuous values are returned as they are and flagged, never clamped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy.special import ndtr

from .graph import NeighborhoodGraph
from .model import ModelParams, thermo_constants
from .truncnorm import mass


class BoundError(ValueError):
    pass


def contraction_rate(N: int, n_max: int, gamma: float, sigma: float) -> float:
    """Per-step contraction factor ``1 - 1 / (N (1 + n_max gamma^2 sigma^2))``."""
    return 1.0 - 1.0 / (N * (1.0 + n_max * gamma**2 * sigma**2))


def _log_contraction(N, n_max, gamma, sigma) -> float:
    return math.log1p(-1.0 / (N * (1.0 + n_max * gamma**2 * sigma**2)))


def wasserstein_time_from_log(N: int, n_max: int, gamma: float, sigma: float, log_eps: float) -> float:
    if n_max < 1:
        raise BoundError(
            "n_max = 0: the weighted metric vanishes identically; "
            "the model is fully decoupled and has no Wasserstein bound"
        )
    if N < 1:
        raise BoundError("N must be at least 1")
    log_diam = math.log(n_max * N)
    if log_eps >= log_diam:
        return 0.0
    return (log_eps - log_diam) / _log_contraction(N, n_max, gamma, sigma)


def wasserstein_mixing_time(N: int, n_max: int, gamma: float, sigma: float, eps: float) -> float:
    """Steps after which the weighted-metric Wasserstein distance is at most ``eps``.

    The denominator uses the ``(N - 1) / N`` form of the contraction factor.
    Returns 0 when ``eps`` is at least the metric diameter ``n_max * N``.
    """
    if not eps > 0:
        raise BoundError("eps must be positive")
    return wasserstein_time_from_log(N, n_max, gamma, sigma, math.log(eps))


def coupon_collector_M(N: int, eps: float) -> int:
    if not 0 < eps < 2:
        raise BoundError("eps must lie in (0, 2)")
    return max(1, math.ceil(N * math.log(N) + N * math.log(2.0 / eps)))


@dataclass(frozen=True)
class BoundReport:
    epsilon: float
    N: int
    n_max: int
    n_min: int
    gamma: float
    sigma: float
    theta_wasserstein_eps: float
    theta_wasserstein: float
    tau: int
    M: int
    epsilon_tilde: float
    omega: float
    log_omega: float
    log_exp_factor: float
    zeta: float
    zeta_safe: float
    sigma_tilde: float
    sigma_tilde_sq: float
    total_time: float
    schedule: int
    zeta_safe_warning: bool
    omega_sq_vacuous: bool

    def to_json(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        lines = [
            f"target epsilon                 {self.epsilon:g}",
            f"sites N / n_max / n_min        {self.N} / {self.n_max} / {self.n_min}",
            f"gamma / sigma                  {self.gamma:g} / {self.sigma:g}",
            f"Wasserstein time at epsilon    {self.theta_wasserstein_eps:.6f}",
            f"coupon phase M                 {self.M}",
            f"epsilon_tilde                  {self.epsilon_tilde:.6e}",
            f"zeta                           {self.zeta:.6f}",
            f"sigma_tilde^2                  {self.sigma_tilde_sq:.6f}",
            f"omega                          {self.omega:.6e}  (log {self.log_omega:.6f})",
            f"Wasserstein time at omega^2    {self.theta_wasserstein:.6f}",
            f"TV time theta(omega^2) + M     {self.total_time:.6f}",
            f"integer schedule tau + M       {self.tau} + {self.M} = {self.schedule}",
        ]
        if self.zeta_safe_warning:
            lines.append(f"warning: zeta_safe = {self.zeta_safe:.6f} exceeds zeta (negative observations)")
        if self.omega_sq_vacuous:
            lines.append("note: omega^2 is at least the metric diameter; tau = 0")
        return "\n".join(lines)


def tv_mixing_time(params: ModelParams, graph: NeighborhoodGraph, eps: float) -> BoundReport:
    """All quantities of the total-variation bound for target ``eps``."""
    if not 0 < eps < 1:
        raise BoundError("eps must lie in (0, 1)")
    N, n_max = graph.num_sites, graph.n_max
    tc = thermo_constants(params, graph)
    M = coupon_collector_M(N, eps)
    eps_tilde = -math.expm1(math.log1p(-eps / 2) / M)
    log_factor = (tc.zeta + 1.0) ** 2 / (2.0 * tc.sigma_tilde_sq)
    # log(1 + e^L) without overflow
    log_denom = log_factor + math.log1p(math.exp(-log_factor))
    log_omega = math.log(eps_tilde) - log_denom
    theta = wasserstein_time_from_log(N, n_max, params.gamma, params.sigma, 2 * log_omega)
    theta_eps = wasserstein_mixing_time(N, n_max, params.gamma, params.sigma, eps)
    tau = math.ceil(theta)
    return BoundReport(
        epsilon=float(eps),
        N=N,
        n_max=n_max,
        n_min=graph.n_min,
        gamma=params.gamma,
        sigma=params.sigma,
        theta_wasserstein_eps=theta_eps,
        theta_wasserstein=theta,
        tau=tau,
        M=M,
        epsilon_tilde=eps_tilde,
        omega=math.exp(log_omega),
        log_omega=log_omega,
        log_exp_factor=log_factor,
        zeta=tc.zeta,
        zeta_safe=tc.zeta_safe,
        sigma_tilde=tc.sigma_tilde,
        sigma_tilde_sq=tc.sigma_tilde_sq,
        total_time=theta + M,
        schedule=tau + M,
        zeta_safe_warning=tc.zeta_safe > tc.zeta,
        omega_sq_vacuous=2 * log_omega >= math.log(n_max * N),
    )


def normal_tv(mu1: float, mu2: float, sigma: float) -> tuple[float, float]:
    """TV between Normal(mu1, sigma^2) and Normal(mu2, sigma^2).

    Returns ``(exact, bound)`` with ``exact = 2 Phi(|d| / (2 sigma)) - 1`` and
    the linear bound ``|d| / sqrt(2 pi sigma^2)``.
    """
    if not sigma > 0:
        raise BoundError("sigma must be positive")
    d = abs(mu1 - mu2)
    half = d / (2 * sigma)
    # 2 Phi(h) - 1 = 1 - 2 Phi(-h), accurate for both small and large h
    exact = float(1.0 - 2.0 * ndtr(-half)) if half > 1 else math.erf(half / math.sqrt(2))
    return exact, d / math.sqrt(2 * math.pi * sigma**2)


def truncated_tv_bound(tv_untruncated: float, mass1: float, mass2: float) -> float:
    """Restricting two laws to a common set inflates TV by at most 1 / min mass."""
    if not (mass1 > 0 and mass2 > 0):
        raise BoundError("conditioning set must have positive mass under both laws")
    return tv_untruncated / min(mass1, mass2)


def log_truncated_mass_lower_bound(zeta_i: float, sigma_sq: float) -> float:
    return -0.5 * math.log(2 * math.pi * sigma_sq) - (abs(zeta_i) + 1.0) ** 2 / (2 * sigma_sq)


def truncated_mass_lower_bound(zeta_i: float, sigma_sq: float) -> tuple[float, float]:
    """``(mass, lower_bound)``: unit-interval mass of Normal(zeta_i, sigma_sq)
    and the bound obtained from the smallest density value on [0, 1]."""
    if not sigma_sq > 0:
        raise BoundError("sigma_sq must be positive")
    return float(mass(zeta_i, sigma_sq)), math.exp(log_truncated_mass_lower_bound(zeta_i, sigma_sq))


def log_per_site_factor(zeta_i: float, sigma_sq_i: float) -> float:
    return (abs(zeta_i) + 1.0) ** 2 / (2 * sigma_sq_i)


def per_site_noncoalescence_bound(zeta_i: float, sigma_sq_i: float, gamma: float, neighbor_l1_diff: float) -> float:
    """Upper bound on the probability a maximal-coupling update fails to meet.

    May exceed 1 (vacuous); returned unclamped.
    """
    scale = sigma_sq_i * gamma**2 * neighbor_l1_diff
    if scale == 0:
        return 0.0
    try:
        return math.exp(log_per_site_factor(zeta_i, sigma_sq_i) + math.log(scale))
    except OverflowError:
        return math.inf
