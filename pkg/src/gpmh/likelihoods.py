"""
Noisy log-likelihood sources.

* Toy 6D log-densities built as sums of three 2D pieces, with additive
  Gaussian noise of known sd.
* Ricker and theta-Ricker population models with Poisson observations.
* Gaussian synthetic likelihood from repeated simulations, with the noise sd
  of each evaluation estimated by bootstrapping the simulated summaries.

Wood's 13 Ricker summaries (as used here, in this order):

    0       mean of the series
    1       number of zero observations
    2-7     autocovariances at lags 0..5 (divisor T, as in R's ``acf``)
    8-10    coefficients (b1, b2, b3) of the no-intercept cubic regression of
            the sorted simulated first differences on the sorted first
            differences of the reference (observed) series:
            d_sim ~ b1 z + b2 z^2 + b3 z^3
    11-12   coefficients (beta1, beta2) of the no-intercept autoregression
            x_{t+1}^0.3 ~ beta1 x_t^0.3 + beta2 x_t^0.6
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

__all__ = [
    "UniformBox",
    "NoisyLogLikelihood",
    "ToyTarget",
    "SlConfig",
    "SyntheticLikelihood",
    "f2d",
    "f6d",
    "toy_logdensity",
    "ricker_simulate",
    "theta_ricker_simulate",
    "wood_summaries",
    "wood_summaries_batch",
    "synthetic_loglik",
    "TOY_NAMES",
]


class UniformBox:
    """Uniform prior on an axis-aligned box."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise ValueError("empty prior box")
        self._logz = -float(np.sum(np.log(self.upper - self.lower)))

    @property
    def dim(self):
        return self.lower.size

    @property
    def bounds(self):
        return self.lower, self.upper

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def logpdf(self, theta):
        return self._logz if self.contains(theta) else -np.inf

    __call__ = logpdf

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, size=shape)


class NoisyLogLikelihood(Protocol):
    dim: int

    def evaluate(self, theta, rng) -> tuple[float, float, bool]:
        ...


# ---------------------------------------------------------------------------
# toy densities

TOY_NAMES = ("simple", "banana", "multimodal")
_RHO = {"simple": 0.25, "banana": 0.9, "multimodal": 0.5}


def f2d(name, th1, th2):
    """2D building block, vectorized over th1, th2."""
    name = name.lower()
    rho = _RHO[name]
    if name == "simple":
        a, b = th1, th2
    elif name == "banana":
        a, b = th1, th2 + th1**2 + 1.0
    elif name == "multimodal":
        a, b = th1, th2**2 - 2.0
    else:
        raise ValueError(f"unknown toy density {name!r}")
    # -0.5 v^T S^-1 v with S = [[1, rho], [rho, 1]]
    return -0.5 * (a * a - 2.0 * rho * a * b + b * b) / (1.0 - rho * rho)


def f6d(name, theta):
    theta = np.asarray(theta, dtype=float)
    return sum(f2d(name, theta[..., 2 * i], theta[..., 2 * i + 1]) for i in range(3))


def toy_logdensity(name, theta, noise_sd, rng):
    y = float(f6d(name, theta)) + noise_sd * rng.standard_normal()
    return y, float(noise_sd), True


_TOY_PRIORS = {
    "simple": (np.full(6, -16.0), np.full(6, 16.0)),
    "banana": (np.tile([-6.0, -20.0], 3), np.tile([6.0, 2.0], 3)),
    "multimodal": (np.full(6, -6.0), np.full(6, 6.0)),
}
_TOY_START = {"simple": -8.0, "banana": -3.0, "multimodal": -3.0}
_TOY_NOISE = {"simple": 2.0, "banana": 1.0, "multimodal": 1.0}


@dataclass
class ToyTarget:
    name: str
    noise_sd: float | None = None
    dim: int = 6

    def __post_init__(self):
        self.name = self.name.lower()
        if self.name not in TOY_NAMES:
            raise ValueError(f"unknown toy density {self.name!r}")
        if self.noise_sd is None:
            self.noise_sd = _TOY_NOISE[self.name]

    def evaluate(self, theta, rng):
        return toy_logdensity(self.name, theta, self.noise_sd, rng)

    def exact_logdensity(self, theta):
        return float(f6d(self.name, theta))

    def prior(self):
        return UniformBox(*_TOY_PRIORS[self.name])

    def initial_point(self):
        return np.full(6, _TOY_START[self.name])


# ---------------------------------------------------------------------------
# Ricker models


def _poisson_obs(logN, phi, rng):
    lam = phi * np.exp(logN)
    bad = ~np.isfinite(lam) | (lam > 1e15)
    lam = np.where(bad, 0.0, lam)
    x = rng.poisson(lam).astype(float)
    x[bad] = np.nan
    return x


def ricker_simulate(params, T, rng, size=None):
    """Ricker series x_1..x_T; N_{t+1} = r N_t exp(-N_t + e_t), x_t ~ Poi(phi N_t).

    Returns an array of shape (T,) or (size, T). Entries are NaN where the
    latent state overflowed.
    """
    log_r, phi, sigma = (float(v) for v in params)
    n = 1 if size is None else int(size)
    logN = np.zeros(n)
    out = np.empty((n, T))
    eps = sigma * rng.standard_normal((T, n))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            logN = log_r + logN - np.exp(logN) + eps[t]
            out[:, t] = logN
        x = _poisson_obs(out, phi, rng)
    return x[0] if size is None else x


def theta_ricker_simulate(params, T, rng, size=None):
    """theta-Ricker: N_{t+1} = r N_t exp(-log(r) (N_t/K)^theta + e_t)."""
    log_r, th, K, phi, sigma = (float(v) for v in params)
    n = 1 if size is None else int(size)
    logN = np.zeros(n)
    out = np.empty((n, T))
    eps = sigma * rng.standard_normal((T, n))
    logK = np.log(K)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            logN = log_r + logN - log_r * np.exp(th * (logN - logK)) + eps[t]
            out[:, t] = logN
        x = _poisson_obs(out, phi, rng)
    return x[0] if size is None else x


def wood_summaries_batch(X, reference=None):
    """Wood's 13 statistics for each row of X (n, T).

    Returns (S, valid) with S of shape (n, 13); ``valid`` is False for rows
    whose autoregression design is degenerate (e.g. all-zero series) or that
    contain non-finite values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, T = X.shape
    if T < 7:
        raise ValueError("series must have at least 7 points")
    finite = np.all(np.isfinite(X), axis=1)
    X = np.where(np.isfinite(X), X, 0.0)
    S = np.empty((n, 13))
    S[:, 0] = X.mean(1)
    S[:, 1] = (X == 0).sum(1)
    Xc = X - S[:, :1]
    for k in range(6):
        S[:, 2 + k] = (Xc[:, : T - k] * Xc[:, k:]).sum(1) / T

    if reference is None:
        if n != 1:
            raise ValueError("a reference series is needed for more than one row")
        ref = X[0]
    else:
        ref = np.asarray(reference, dtype=float)
    z = np.sort(np.diff(ref))
    Z = np.column_stack([z, z**2, z**3])
    D = np.sort(np.diff(X, axis=1), axis=1)
    S[:, 8:11] = (np.linalg.pinv(Z) @ D.T).T

    a = X[:, :-1] ** 0.3
    b = a * a
    c = X[:, 1:] ** 0.3
    G = np.empty((n, 2, 2))
    G[:, 0, 0] = (a * a).sum(1)
    G[:, 0, 1] = G[:, 1, 0] = (a * b).sum(1)
    G[:, 1, 1] = (b * b).sum(1)
    rhs = np.stack([(a * c).sum(1), (b * c).sum(1)], axis=1)
    det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] ** 2
    scale = G[:, 0, 0] * G[:, 1, 1]
    ok = det > 1e-10 * np.maximum(scale, 1e-300)
    beta = np.einsum("nij,nj->ni", np.linalg.pinv(G, rcond=1e-10), rhs)
    S[:, 11:13] = beta
    return S, ok & finite


def wood_summaries(series, reference=None):
    """13-vector of summaries for one series; returns (stats, valid).

    Without ``reference`` the series is its own reference for the
    ordered-difference regression, which is how the observed summaries are
    formed.
    """
    S, ok = wood_summaries_batch(np.asarray(series, dtype=float)[None, :], reference)
    return S[0], bool(ok[0])


# ---------------------------------------------------------------------------
# synthetic likelihood


@dataclass
class SlConfig:
    n_reps: int = 100
    n_bootstrap: int = 2000
    ridge: float = 1e-8


def _gauss_logpdf_batch(s_obs, means, covs, ridge):
    """log N(s_obs | means[b], covs[b]) for a stack; NaN where singular."""
    B, s = means.shape
    out = np.full(B, np.nan)
    try:
        L = np.linalg.cholesky(covs)
        good = np.ones(B, dtype=bool)
    except np.linalg.LinAlgError:
        tr = np.trace(covs, axis1=1, axis2=2)[:, None, None]
        covs = covs + ridge * tr / s * np.eye(s)
        L = np.empty_like(covs)
        good = np.zeros(B, dtype=bool)
        for i in range(B):
            try:
                L[i] = np.linalg.cholesky(covs[i])
                good[i] = True
            except np.linalg.LinAlgError:
                pass
    if not good.any():
        return out
    Lg = L[good]
    r = (s_obs[None, :] - means[good])[..., None]
    w = np.linalg.solve(Lg, r)[..., 0]
    logdet = 2.0 * np.log(np.diagonal(Lg, axis1=1, axis2=2)).sum(1)
    out[good] = -0.5 * ((w * w).sum(1) + logdet + s * np.log(2 * np.pi))
    return out


def synthetic_loglik(simulator: Callable, summary: Callable, theta, config: SlConfig, rng, s_obs):
    """Gaussian synthetic log-likelihood of ``s_obs`` at ``theta``.

    ``simulator(theta, rng, n)`` returns n simulated datasets; ``summary``
    maps them to an (n, s) array (optionally returning (S, valid)). The noise
    sd is the sd of the SL value over bootstrap resamples of the N summary
    rows. Returns (y, noise_sd, valid).
    """
    s_obs = np.asarray(s_obs, dtype=float)
    N = int(config.n_reps)
    sims = simulator(theta, rng, N)
    S = summary(sims)
    if isinstance(S, tuple):
        S = S[0]
    S = np.asarray(S, dtype=float)
    s = S.shape[1]
    if N < s + 2:
        raise ValueError("need at least s + 2 replications")
    if not np.all(np.isfinite(S)):
        return float("nan"), float("nan"), False
    mu = S.mean(0)
    C = np.cov(S, rowvar=False, ddof=1).reshape(s, s)
    y = _gauss_logpdf_batch(s_obs, mu[None], C[None], config.ridge)[0]
    if not np.isfinite(y):
        return float("nan"), float("nan"), False
    noise_sd = 0.0
    if config.n_bootstrap > 0:
        idx = rng.integers(0, N, size=(config.n_bootstrap, N))
        Sb = S[idx]
        mb = Sb.mean(1)
        Cb = Sb - mb[:, None, :]
        Cb = np.matmul(Cb.transpose(0, 2, 1), Cb) / (N - 1)
        yb = _gauss_logpdf_batch(s_obs, mb, Cb, config.ridge)
        yb = yb[np.isfinite(yb)]
        noise_sd = float(np.std(yb, ddof=1)) if yb.size > 1 else float("inf")
    return float(y), noise_sd, True


@dataclass
class SyntheticLikelihood:
    """SL target for a simulator with fixed observed summaries."""

    simulator: Callable
    summary: Callable
    s_obs: np.ndarray
    dim: int
    config: SlConfig = field(default_factory=SlConfig)

    def evaluate(self, theta, rng):
        return synthetic_loglik(self.simulator, self.summary, theta, self.config, rng, self.s_obs)

    def evaluate_no_bootstrap(self, theta, rng):
        cfg = SlConfig(self.config.n_reps, 0, self.config.ridge)
        return synthetic_loglik(self.simulator, self.summary, theta, cfg, rng, self.s_obs)
