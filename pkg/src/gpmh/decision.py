"""
Closed-form uncertainty of a single accept/reject decision.

Under the GP surrogate, log of the MH acceptance ratio is Gaussian with mean
``mu`` and sd ``sigma``, so the ratio itself is log-Normal. The median
estimate ``exp(mu)`` is used for the decision, and the probability that it
disagrees with the decision under the true ratio is the "error". The
conditional error fixes the uniform variate u; the unconditional error
averages it out over u ~ U(0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, ndtr, owens_t as _owens_t

from .gp import GpPosterior

__all__ = [
    "PairStats",
    "Decision",
    "NeedsEvaluation",
    "pair_stats",
    "owen_t",
    "conditional_error",
    "unconditional_error",
    "kappa_mean_var",
    "decide",
    "median_optimality_check",
    "SIGMA_ZERO",
]

SIGMA_ZERO = 1e-12  # sigma below this counts as an exactly known ratio


@dataclass(frozen=True)
class PairStats:
    mu_t: float
    sigma_t: float

    def __post_init__(self):
        if not np.isfinite(self.mu_t):
            raise ValueError("mu_t must be finite")
        if not (np.isfinite(self.sigma_t) and self.sigma_t >= 0):
            raise ValueError("sigma_t must be finite and non-negative")

    @property
    def gamma_hat(self):
        with np.errstate(over="ignore"):
            return float(np.exp(self.mu_t))


@dataclass(frozen=True)
class Decision:
    accepted: bool
    gamma_hat: float
    error_value: float
    error_kind: str  # "conditional" or "unconditional"
    u: float


@dataclass(frozen=True)
class NeedsEvaluation:
    error_value: float
    error_kind: str


def pair_stats(gp: GpPosterior, theta, theta_prime, log_prior: Callable, log_proposal_ratio=0.0):
    """Log-Normal parameters of the acceptance ratio for (theta -> theta')."""
    lp0 = log_prior(theta)
    if not np.isfinite(lp0):
        raise ValueError("current point has zero prior density")
    m, C = gp.mean_cov(np.vstack([theta, theta_prime]))
    mu = m[1] - m[0] + log_prior(theta_prime) - lp0 + log_proposal_ratio
    s2 = max(C[0, 0] + C[1, 1] - 2.0 * C[0, 1], 0.0)
    return PairStats(float(mu), float(np.sqrt(s2)))


def owen_t(h, a):
    """Owen's T function, T(h, a) = 1/(2 pi) int_0^a exp(-h^2 (1+x^2)/2) / (1+x^2) dx.

    Infinite ``a`` is handled through T(h, +-inf) = +-Phi(-|h|)/2.
    """
    h = np.asarray(h, dtype=float)
    a = np.asarray(a, dtype=float)
    h, a = np.broadcast_arrays(h, a)
    out = np.empty(h.shape)
    inf = np.isinf(a)
    fin = ~inf
    out[fin] = _owens_t(h[fin], a[fin])
    out[inf] = np.sign(a[inf]) * 0.5 * ndtr(-np.abs(h[inf]))
    return out if out.ndim else float(out)


def _sigma(stats):
    return 0.0 if stats.sigma_t < SIGMA_ZERO else stats.sigma_t


def conditional_error(stats: PairStats, u: float) -> float:
    if not 0.0 < u <= 1.0:
        raise ValueError("u must lie in (0, 1]")
    z = stats.mu_t - np.log(u)
    s = _sigma(stats)
    if s == 0.0:
        return 0.0 if z != 0.0 else 0.5
    return float(ndtr(-abs(z) / s))


def _uncond(mu, s):
    """Vectorized closed form for sigma > 0."""
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    mu, s = np.broadcast_arrays(mu, s)
    # exp(mu + s^2/2) Phi(-(mu + s^2)/s), done in log space to survive large s;
    # e2 only enters the mu < 0 branch, where it cannot overflow
    with np.errstate(over="ignore"):
        e1 = np.exp(mu + 0.5 * s * s + log_ndtr(-(mu + s * s) / s))
        e2 = np.exp(mu + 0.5 * s * s + np.log(2.0) + log_ndtr(-s))
    pos = ndtr(-mu / s) - e1
    neg = ndtr(mu / s) + e1 - e2
    return np.clip(np.where(mu >= 0, pos, neg), 0.0, 0.5)


def unconditional_error(stats: PairStats) -> float:
    """Conditional error averaged over u ~ U(0, 1), in closed form."""
    s = _sigma(stats)
    if s == 0.0:
        return 0.0
    return float(_uncond(stats.mu_t, s))


def kappa_mean_var(stats: PairStats, u: float):
    """Mean and variance of the accept indicator 1{gamma_f >= u}."""
    z = stats.mu_t - np.log(u)
    s = _sigma(stats)
    if s == 0.0:
        m = 1.0 if z >= 0 else 0.0
        return m, 0.0
    m = float(ndtr(z / s))
    return m, float(ndtr(z / s) * ndtr(-z / s))


def decide(stats: PairStats, u: float, epsilon: float, error_kind: str = "unconditional"):
    """Accept/reject by the median estimate if the error is within epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if error_kind == "unconditional":
        err = unconditional_error(stats)
    elif error_kind == "conditional":
        err = conditional_error(stats, u)
    else:
        raise ValueError(f"unknown error kind {error_kind!r}")
    if err <= epsilon:
        return Decision(
            accepted=bool(stats.mu_t >= np.log(u)),
            gamma_hat=stats.gamma_hat,
            error_value=err,
            error_kind=error_kind,
            u=u,
        )
    return NeedsEvaluation(err, error_kind)


@dataclass
class MedianCheckReport:
    best_estimator: float
    sample_median: float
    best_error: float
    error_at_median: float
    grid_step: float
    errors: np.ndarray

    @property
    def ok(self):
        return abs(self.best_estimator - self.sample_median) <= self.grid_step * (1 + 1e-9) or (
            self.error_at_median <= self.best_error + 1e-12
        )


def median_optimality_check(gamma_samples, estimator_grid, n_u=4000):
    """Empirical unconditional error of each fixed estimator g of gamma.

    For an estimator g the error at u is P(gamma < u) if g >= u and
    P(gamma >= u) otherwise; it is averaged over a midpoint grid of u in (0,1).
    """
    gs = np.sort(np.asarray(gamma_samples, dtype=float))
    grid = np.asarray(estimator_grid, dtype=float)
    u = (np.arange(n_u) + 0.5) / n_u
    F = np.searchsorted(gs, u, side="left") / gs.size  # P(gamma < u)
    # cumulative sums let each g be handled in O(1)
    cF = np.concatenate([[0.0], np.cumsum(F)])
    cG = np.concatenate([[0.0], np.cumsum(1.0 - F)])
    k = np.searchsorted(u, grid, side="right")  # number of u with u <= g
    errs = (cF[k] + (cG[-1] - cG[k])) / n_u
    i = int(np.argmin(errs))
    med = float(np.median(gs))
    step = float(np.max(np.diff(grid))) if grid.size > 1 else 0.0
    # error at the median itself, same rule
    km = np.searchsorted(u, med, side="right")
    err_med = (cF[km] + (cG[-1] - cG[km])) / n_u
    return MedianCheckReport(float(grid[i]), med, float(errs[i]), float(err_med), step, errs)
