"""
Posterior estimators from the surrogate, TV distances, and the theoretical
bounds on how many evaluations a single decision can need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import ndtr, ndtri

from .decision import PairStats, _uncond, unconditional_error
from .gp import GpPosterior

__all__ = [
    "SurrogatePosterior",
    "TvReport",
    "log_unnormalized_estimate",
    "marginal_tv",
    "c_n",
    "bound_conditional",
    "bound_unconditional",
    "sample_mu_n",
    "bound_conditional_mc",
    "bound_unconditional_mc",
    "inverse_unconditional_error",
    "iqr_ratio_bound",
    "lognormal_iqr",
]


@dataclass
class SurrogatePosterior:
    gp: GpPosterior
    prior: object
    estimator_kind: str = "marginal_median"  # or "marginal_mode"


def log_unnormalized_estimate(sp: SurrogatePosterior, theta):
    """log pi(theta) + m_t(theta), minus s_t^2(theta) for the mode estimator."""
    lp = sp.prior.logpdf(theta)
    if not np.isfinite(lp):
        return -np.inf
    m = float(sp.gp.mean(theta)[0])
    if sp.estimator_kind == "marginal_mode":
        return lp + m - float(sp.gp.var(theta)[0])
    if sp.estimator_kind == "marginal_median":
        return lp + m
    raise ValueError(f"unknown estimator {sp.estimator_kind!r}")


@dataclass
class TvReport:
    per_dimension_tv: np.ndarray
    mean_tv: float
    joint_tv_2d: float | None = None

    def to_dict(self):
        return {
            "per_dimension_tv": [float(v) for v in self.per_dimension_tv],
            "mean_tv": float(self.mean_tv),
            "joint_tv_2d": None if self.joint_tv_2d is None else float(self.joint_tv_2d),
        }


def _hist_tv(a, b, bins):
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    pa = np.histogram(a, edges)[0] / a.size
    pb = np.histogram(b, edges)[0] / b.size
    return min(0.5 * float(np.abs(pa - pb).sum()), 1.0)  # rounding can push disjoint sets past 1


def marginal_tv(samples_a, samples_b, bins=100):
    """Average TV over the 1D marginals, from equal-width histograms.

    Each marginal uses ``bins`` bins spanning the union of both sample sets.
    For 2D inputs the joint TV on a bins x bins grid is also reported.
    """
    A = np.asarray(samples_a, dtype=float)
    B = np.asarray(samples_b, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("empty sample set")
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    tv = np.array([_hist_tv(A[:, j], B[:, j], bins) for j in range(A.shape[1])])
    joint = None
    if A.shape[1] == 2:
        lo = np.minimum(A.min(0), B.min(0))
        hi = np.maximum(A.max(0), B.max(0))
        hi = np.where(hi > lo, hi, lo + 1.0)
        edges = [np.linspace(lo[j], hi[j], bins + 1) for j in range(2)]
        ha = np.histogram2d(A[:, 0], A[:, 1], edges)[0] / A.shape[0]
        hb = np.histogram2d(B[:, 0], B[:, 1], edges)[0] / B.shape[0]
        joint = min(0.5 * float(np.abs(ha - hb).sum()), 1.0)
    return TvReport(tv, float(tv.mean()), joint)


# ---------------------------------------------------------------------------
# worst-case bounds


def c_n(sigma_s, sigma_n_bar, n):
    """2 min(sigma_s, sigma_n / sqrt(floor(n/2))); the second term is inf for n < 2."""
    half = int(n) // 2
    second = sigma_n_bar / np.sqrt(half) if half > 0 else np.inf
    return 2.0 * min(sigma_s, second)


def bound_conditional(epsilon, sigma_s, sigma_n_bar, n):
    """Upper bound on P(conditional error > epsilon) after n split evaluations."""
    if not 0 < epsilon <= 0.5:
        raise ValueError("epsilon must lie in (0, 1/2]")
    c = c_n(sigma_s, sigma_n_bar, n)
    return float(1.0 - np.exp(2.0 * ndtri(epsilon) * c))


def _uncond_neg_branch(mu, c):
    return ndtr(mu / c) + np.exp(mu + 0.5 * c * c) * (ndtr(-(mu + c * c) / c) - 2.0 * ndtr(-c))


def bound_unconditional(sigma_s, sigma_n_bar, n, return_argmax=False):
    """max over mu <= 0 of the unconditional error with sigma = c_n."""
    c = c_n(sigma_s, sigma_n_bar, n)
    if c <= 0:
        return (0.0, 0.0) if return_argmax else 0.0
    res = minimize_scalar(lambda m: -_uncond_neg_branch(m, c), bounds=(-20.0, 0.0), method="bounded",
                          options={"xatol": 1e-10})
    cand = [(float(-res.fun), float(res.x)), (float(_uncond_neg_branch(0.0, c)), 0.0)]
    val, arg = max(cand)
    return (val, arg) if return_argmax else val


# ---------------------------------------------------------------------------
# bounds averaged over mu under a Gaussian target


def sample_mu_n(p, s2, n_mc, rng):
    """mu = sum_j (psi_j^2 - psi'_j^2) / 2 with (psi, psi') ~ N(0, [[1, 1], [1, s2 + 1]])."""
    z1 = rng.standard_normal((n_mc, p))
    z2 = rng.standard_normal((n_mc, p))
    psi = z1
    psi_p = z1 + np.sqrt(s2) * z2
    return 0.5 * (psi**2 - psi_p**2).sum(1)


def bound_conditional_mc(epsilon, sigma_s, sigma_n_bar, n, p, s2, n_mc, rng):
    c = c_n(sigma_s, sigma_n_bar, n)
    mu = sample_mu_n(p, s2, n_mc, rng)
    q = ndtri(epsilon) * c
    with np.errstate(over="ignore"):
        v = np.maximum(1.0 - np.exp(mu + q), 0.0) + np.minimum(np.exp(mu - q) - 1.0, 0.0)
    return float(v.mean())


def bound_unconditional_mc(epsilon, sigma_s, sigma_n_bar, n, p, s2, n_mc, rng):
    c = c_n(sigma_s, sigma_n_bar, n)
    mu = sample_mu_n(p, s2, n_mc, rng)
    if c <= 0:
        return 0.0
    return float(np.mean(_uncond(mu, c) >= epsilon))


# ---------------------------------------------------------------------------
# IQR of the acceptance ratio


def inverse_unconditional_error(mu, epsilon, sigma_max=1e4):
    """sigma with unconditional_error(mu, sigma) = epsilon (it is increasing in sigma)."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    f = lambda s: float(_uncond(mu, s)) - epsilon
    lo = 1e-12
    while f(lo) > 0:
        lo *= 1e-3
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > sigma_max:
            raise ValueError("epsilon not attainable for this mu")
    return brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def lognormal_iqr(mu, sigma, log_prefactor=0.0):
    """Interquartile range of the log-Normal variable exp(log_prefactor + N(mu, sigma^2))."""
    return 2.0 * np.exp(log_prefactor + mu) * np.sinh(ndtri(0.75) * sigma)


def iqr_ratio_bound(gp: GpPosterior, theta, theta_prime, prior, epsilon, log_proposal_ratio=0.0):
    """Upper bound on the IQR of the acceptance ratio once the error is <= epsilon."""
    lp0 = prior.logpdf(theta)
    if not np.isfinite(lp0):
        raise ValueError("pi(theta) must be positive")
    m = gp.mean(np.vstack([theta, theta_prime]))
    mu = m[1] - m[0] + prior.logpdf(theta_prime) - lp0 + log_proposal_ratio
    s_inv = inverse_unconditional_error(mu, epsilon)
    with np.errstate(over="ignore"):
        return float(2.0 * np.exp(mu) * np.sinh(ndtri(0.75) * s_inv))
