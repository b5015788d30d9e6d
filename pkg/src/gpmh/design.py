"""
Choosing where to evaluate the log-likelihood next.

For a pending decision (theta -> theta') with log-ratio mean ``mu`` and
variance ``s2``, an evaluation at theta* would shrink the variance by
``xi2 = xi^2(theta, theta'; theta*)`` and move the mean by a Gaussian amount
with variance xi2. The expected post-evaluation errors have closed forms in
Owen's T function and all three are strictly decreasing in xi2, so every
criterion is minimized by the candidate with the largest xi2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import minimize

from .decision import SIGMA_ZERO, PairStats, conditional_error, kappa_mean_var, owen_t, unconditional_error
from .gp import GpPosterior, lookahead_xi2

__all__ = [
    "DesignStrategy",
    "CandidateScore",
    "lookahead_conditional",
    "lookahead_unconditional",
    "lookahead_kappa_var",
    "expected_conditional_error",
    "expected_unconditional_error",
    "expected_kappa_variance",
    "score_candidate",
    "epoe_box",
    "select_evaluation",
]

SL_CANDIDATE_NOISE = 0.1


@dataclass
class DesignStrategy:
    """kind: 'epoe' (box search), 'epoer' (pick from {theta, theta'}) or 'naive'."""

    kind: str = "epoe"
    box_scale_c: float = 0.75
    n_random_starts: int = 2
    maxiter: int = 100
    candidate_noise_sd: float | None = None

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("epoe", "epoer", "naive"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.box_scale_c <= 0:
            raise ValueError("box_scale_c must be positive")


@dataclass
class CandidateScore:
    theta_star: np.ndarray
    xi2: float
    expected_conditional: float
    expected_unconditional: float
    expected_kappa_var: float


# ---------------------------------------------------------------------------
# closed forms in terms of (mu, s2, xi2)


def _split(s2, xi2):
    s2 = float(s2)
    xi2 = np.clip(np.asarray(xi2, dtype=float), 0.0, s2)
    return s2, xi2


def lookahead_conditional(mu, s2, xi2, u):
    """E[conditional error after the evaluation] = 2 T(h, sqrt(s2 - xi2)/xi)."""
    s2, xi2 = _split(s2, xi2)
    if np.sqrt(s2) < SIGMA_ZERO:
        return np.zeros_like(xi2) + conditional_error(PairStats(mu, 0.0), u)
    h = (np.log(u) - mu) / np.sqrt(s2)
    with np.errstate(divide="ignore"):
        a = np.where(xi2 > 0, np.sqrt(s2 - xi2) / np.sqrt(xi2), np.inf)
    return 2.0 * owen_t(h, a)


def lookahead_kappa_var(mu, s2, xi2, u):
    """E[kappa variance after the evaluation] = 2 T(h, sqrt((s2 - xi2)/(s2 + xi2)))."""
    s2, xi2 = _split(s2, xi2)
    if np.sqrt(s2) < SIGMA_ZERO:
        return np.zeros_like(xi2)
    h = (np.log(u) - mu) / np.sqrt(s2)
    a = np.sqrt((s2 - xi2) / (s2 + xi2))
    return 2.0 * owen_t(h, a)


def lookahead_unconditional(mu, s2, xi2, epsabs=1e-12):
    """u-average of lookahead_conditional, by adaptive quadrature over (0, 1).

    Vectorized over ``xi2``: every component shares the same quadrature
    nodes, and since the integrand is decreasing in xi2 at every node the
    ordering of the components is preserved.
    """
    s2, xi2 = _split(s2, xi2)
    scalar = xi2.ndim == 0
    xi2 = np.atleast_1d(xi2)
    if np.sqrt(s2) < SIGMA_ZERO:
        out = np.full(xi2.shape, unconditional_error(PairStats(mu, 0.0)))
        return float(out[0]) if scalar else out
    s = np.sqrt(s2)
    with np.errstate(divide="ignore"):
        a = np.where(xi2 > 0, np.sqrt(s2 - xi2) / np.sqrt(xi2), np.inf)

    def f(u):
        return 2.0 * owen_t((np.log(u) - mu) / s, a)

    pts = [float(np.exp(mu))] if mu < 0 else None
    val, _ = quad_vec(f, 0.0, 1.0, epsabs=epsabs, epsrel=1e-10, points=pts, limit=2000)
    val = np.clip(val, 0.0, 0.5)
    return float(val[0]) if scalar else val


# ---------------------------------------------------------------------------
# GP wrappers


def _mu_s2(gp, theta, theta_prime, log_prior_ratio):
    m, C = gp.mean_cov(np.vstack([theta, theta_prime]))
    mu = m[1] - m[0] + log_prior_ratio
    s2 = max(C[0, 0] + C[1, 1] - 2.0 * C[0, 1], 0.0)
    return float(mu), float(s2)


def expected_conditional_error(gp, theta, theta_prime, u, theta_star, star_noise_sd, log_prior_ratio=0.0):
    mu, s2 = _mu_s2(gp, theta, theta_prime, log_prior_ratio)
    xi2 = lookahead_xi2(gp, theta, theta_prime, theta_star, star_noise_sd)
    return float(lookahead_conditional(mu, s2, xi2, u))


def expected_unconditional_error(gp, theta, theta_prime, theta_star, star_noise_sd, log_prior_ratio=0.0):
    mu, s2 = _mu_s2(gp, theta, theta_prime, log_prior_ratio)
    xi2 = lookahead_xi2(gp, theta, theta_prime, theta_star, star_noise_sd)
    return float(lookahead_unconditional(mu, s2, xi2))


def expected_kappa_variance(gp, theta, theta_prime, u, theta_star, star_noise_sd, log_prior_ratio=0.0):
    mu, s2 = _mu_s2(gp, theta, theta_prime, log_prior_ratio)
    xi2 = lookahead_xi2(gp, theta, theta_prime, theta_star, star_noise_sd)
    return float(lookahead_kappa_var(mu, s2, xi2, u))


def score_candidate(gp, theta, theta_prime, u, theta_star, star_noise_sd, log_prior_ratio=0.0):
    mu, s2 = _mu_s2(gp, theta, theta_prime, log_prior_ratio)
    xi2 = lookahead_xi2(gp, theta, theta_prime, theta_star, star_noise_sd)
    return CandidateScore(
        theta_star=np.asarray(theta_star, dtype=float),
        xi2=xi2,
        expected_conditional=float(lookahead_conditional(mu, s2, xi2, u)),
        expected_unconditional=float(lookahead_unconditional(mu, s2, xi2)),
        expected_kappa_var=float(lookahead_kappa_var(mu, s2, xi2, u)),
    )


# ---------------------------------------------------------------------------
# strategies


def candidate_noise(gp: GpPosterior, strategy: DesignStrategy):
    if strategy.candidate_noise_sd is not None:
        return float(strategy.candidate_noise_sd)
    if gp.hyperparams.noise_sd_global is not None:
        return float(gp.hyperparams.noise_sd_global)
    return SL_CANDIDATE_NOISE


def epoe_box(gp, theta, theta_prime, c, domain_bounds=None):
    """Lengthscale-padded bounding box of {theta, theta'}, clipped to the domain."""
    theta = np.asarray(theta, dtype=float)
    theta_prime = np.asarray(theta_prime, dtype=float)
    ell = gp.hyperparams.lengthscales
    lo = np.minimum(theta, theta_prime) - c * ell
    hi = np.maximum(theta, theta_prime) + c * ell
    if domain_bounds is not None:
        a, b = (np.asarray(v, dtype=float) for v in domain_bounds)
        lo = np.maximum(lo, a)
        hi = np.minimum(hi, b)
    return lo, hi


def select_evaluation(gp, theta, theta_prime, strategy: DesignStrategy, domain_bounds, rng):
    """Next evaluation location; see :func:`select_with_role`."""
    return select_with_role(gp, theta, theta_prime, strategy, domain_bounds, rng)[0]


def select_with_role(gp, theta, theta_prime, strategy: DesignStrategy, domain_bounds, rng):
    """Returns (point, role) with role in {'current', 'proposed', 'interior'}."""
    theta = np.asarray(theta, dtype=float)
    theta_prime = np.asarray(theta_prime, dtype=float)
    if strategy.kind == "naive":
        return (theta.copy(), "current") if rng.random() < 0.5 else (theta_prime.copy(), "proposed")

    noise = candidate_noise(gp, strategy)
    if strategy.kind == "epoer":
        x0, x1 = gp.xi2_many(theta, theta_prime, np.vstack([theta, theta_prime]), noise)
        if x0 > x1 + 1e-12:
            return theta.copy(), "current"
        return theta_prime.copy(), "proposed"

    lo, hi = epoe_box(gp, theta, theta_prime, strategy.box_scale_c, domain_bounds)
    hi = np.maximum(hi, lo)
    center = 0.5 * (lo + hi)
    starts = [np.clip(theta, lo, hi), np.clip(theta_prime, lo, hi), np.clip(0.5 * (theta + theta_prime), lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(strategy.n_random_starts)]

    def fun(x):
        v, g = gp.xi2_grad(theta, theta_prime, x, noise)
        return -v, -g

    best_x, best_v = None, -np.inf
    bounds = list(zip(lo, hi))
    for x0 in starts:
        try:
            res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": strategy.maxiter})
        except (ValueError, np.linalg.LinAlgError):
            continue
        if np.all(np.isfinite(res.x)) and np.isfinite(res.fun) and -res.fun > best_v:
            best_x, best_v = np.clip(res.x, lo, hi), -float(res.fun)

    # fallback set, also guards against a poor local optimum
    fb = np.vstack([theta, theta_prime, center])
    fv = gp.xi2_many(theta, theta_prime, fb, noise)
    roles = ["current", "proposed", "interior"]
    j = int(np.argmax(fv))
    if best_x is None or fv[j] > best_v:
        return fb[j].copy(), roles[j]
    if np.array_equal(best_x, theta):
        return best_x, "current"
    if np.array_equal(best_x, theta_prime):
        return best_x, "proposed"
    return best_x, "interior"
