"""Normal distributions restricted to the unit interval.

All functions broadcast over numpy arrays.  Work is done in log space.  The
normalising mass uses the survival function when the mean lies left of the
interval midpoint; CDF and quantile evaluate whichever tail lies on the
point's side of the mean.  Supports sitting many standard deviations into
either tail thus keep full relative precision.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri_exp

_sc_log_ndtr = log_ndtr

_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
_LN2 = math.log(2.0)


def _log1mexp(d):
    """log(1 - exp(d)) for d <= 0."""
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(d > -_LN2, np.log(-np.expm1(d)), np.log1p(-np.exp(d)))


def _log_diff(log_hi, log_lo):
    """log(exp(log_hi) - exp(log_lo)) for log_hi >= log_lo."""
    with np.errstate(invalid="ignore"):
        return log_hi + _log1mexp(log_lo - log_hi)


def _check_domain(variance, u=None):
    if np.any(~(np.asarray(variance) > 0)):
        raise ValueError("variance must be positive")
    if u is not None:
        u = np.asarray(u)
        if np.any(~((u > 0) & (u < 1))):
            raise ValueError("u must lie strictly inside (0, 1)")


def _standardize(mean, variance):
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.sqrt(np.asarray(variance, dtype=np.float64))
    return mean, sd, -mean / sd, (1.0 - mean) / sd


def log_mass(mean, variance):
    """log P[0 <= U <= 1] for U ~ Normal(mean, variance)."""
    mean, sd, a, b = _standardize(mean, variance)
    upper = mean < 0.5
    # mirrored: P = Q(a) - Q(b) with Q(z) = Phi(-z)
    lo = np.where(upper, log_ndtr(-b), log_ndtr(a))
    hi = np.where(upper, log_ndtr(-a), log_ndtr(b))
    return _log_diff(hi, lo)


def mass(mean, variance):
    return np.exp(log_mass(mean, variance))


def logpdf(x, mean, variance):
    """Log density of the truncated law; ``-inf`` outside [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    mean, sd, _, _ = _standardize(mean, variance)
    z = (x - mean) / sd
    out = -0.5 * z * z - np.log(sd) - _HALF_LOG_2PI - log_mass(mean, variance)
    return np.where((x >= 0) & (x <= 1), out, -np.inf)


def pdf(x, mean, variance):
    return np.exp(logpdf(x, mean, variance))


def cdf(x, mean, variance):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    mean, sd, a, b = _standardize(mean, variance)
    z = (x - mean) / sd
    lm = log_mass(mean, variance)
    with np.errstate(divide="ignore"):
        # below the mean: (Phi(z) - Phi(a)) / Z; above: 1 - (Q(z) - Q(b)) / Z
        low = np.exp(_log_diff(log_ndtr(z), log_ndtr(a)) - lm)
        high = -np.expm1(_log_diff(log_ndtr(-z), log_ndtr(-b)) - lm)
    return np.clip(np.where(z < 0, low, high), 0.0, 1.0)


def quantile(mean, variance, u):
    """Inverse CDF of Normal(mean, variance) restricted to [0, 1].

    Strictly increasing and deterministic in ``u``; used for both plain
    sampling and the common-random-number coupling.
    """
    _check_domain(variance, u)
    u = np.asarray(u, dtype=np.float64)
    mean, sd, a, b = _standardize(mean, variance)
    lm = log_mass(mean, variance)
    # Phi(x) = Phi(a) + u Z and Q(x) = Q(b) + (1 - u) Z; invert whichever
    # of the two is at most 1/2, i.e. the tail on x's side of the mean
    log_p_low = np.logaddexp(log_ndtr(a), np.log(u) + lm)
    log_q_up = np.logaddexp(log_ndtr(-b), np.log1p(-u) + lm)
    upper = log_p_low > -_LN2
    z = ndtri_exp(np.minimum(np.where(upper, log_q_up, log_p_low), 0.0))
    x = np.clip(np.where(upper, mean - sd * z, mean + sd * z), 0.0, 1.0)
    # one Newton step on F(x) - u, evaluated on the same side
    zx = (x - mean) / sd
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s_x = np.exp(_log_diff(log_ndtr(-zx), log_ndtr(-b)) - lm)
        f_x = np.exp(_log_diff(log_ndtr(zx), log_ndtr(a)) - lm)
        resid = np.where(upper, (1.0 - u) - s_x, f_x - u)
        dens = np.exp(-0.5 * zx * zx - np.log(sd) - _HALF_LOG_2PI - lm)
        step = np.where(dens > 0, resid / dens, 0.0)
        x1 = x - np.where(np.isfinite(step), step, 0.0)
    return np.clip(x1, 0.0, 1.0)


def normal_cdf(z):
    return ndtr(z)


def _log1mexp_s(d: float) -> float:
    if d == 0.0:
        return -math.inf
    return math.log(-math.expm1(d)) if d > -_LN2 else math.log1p(-math.exp(d))


def _logaddexp_s(p: float, q: float) -> float:
    if p < q:
        p, q = q, p
    if q == -math.inf:
        return p
    return p + math.log1p(math.exp(q - p))


def quantile_scalar(mean: float, variance: float, u: float) -> float:
    """Scalar twin of :func:`quantile` for tight sequential loops."""
    if not variance > 0 or not 0 < u < 1:
        raise ValueError("need variance > 0 and 0 < u < 1")
    sd = math.sqrt(variance)
    a = -mean / sd
    b = (1.0 - mean) / sd
    l_fa = _sc_log_ndtr(a)
    l_qb = _sc_log_ndtr(-b)
    if mean < 0.5:
        l_qa = _sc_log_ndtr(-a)
        lm = l_qa + _log1mexp_s(l_qb - l_qa)
    else:
        l_fb = _sc_log_ndtr(b)
        lm = l_fb + _log1mexp_s(l_fa - l_fb)
    log_p = _logaddexp_s(l_fa, math.log(u) + lm)
    upper = log_p > -_LN2
    if upper:
        log_p = _logaddexp_s(l_qb, math.log1p(-u) + lm)
    z = float(ndtri_exp(min(log_p, 0.0)))
    x = mean - sd * z if upper else mean + sd * z
    x = min(max(x, 0.0), 1.0)
    zx = (x - mean) / sd
    if upper:
        ls = _sc_log_ndtr(-zx)
        resid = (1.0 - u) - (math.exp(ls + _log1mexp_s(l_qb - ls) - lm) if ls > l_qb else 0.0)
    else:
        lf = _sc_log_ndtr(zx)
        resid = (math.exp(lf + _log1mexp_s(l_fa - lf) - lm) if lf > l_fa else 0.0) - u
    dens = math.exp(-0.5 * zx * zx - math.log(sd) - _HALF_LOG_2PI - lm)
    if dens > 0:
        step = resid / dens
        if math.isfinite(step):
            x -= step
    return min(max(x, 0.0), 1.0)
