"""
Gaussian process surrogate for noisy log-likelihood evaluations.

The latent log-likelihood is modelled as

    f | beta ~ GP(h(theta)^T beta, k),    beta ~ N(b, B),

with an anisotropic squared-exponential kernel ``k`` and the explicit basis
``h(theta) = [1, theta_1..theta_p, theta_1^2..theta_p^2]``. The coefficients
``beta`` are integrated out analytically, so the posterior over ``f`` is again
a GP whose mean and covariance pick up a correction through the regularized
basis Gram matrix ``A = B^-1 + H K^-1 H^T``.

Observations are ``y_i = f(theta_i) + e_i`` with ``e_i ~ N(0, sigma_n(theta_i)^2)``.
The noise is either given per evaluation (synthetic likelihood) or a single
global hyperparameter estimated with the others (toy densities).

The module also exposes the one-step lookahead quantities used by the design
code: ``omega``, ``tau^2`` and ``xi^2``, which measure how much the variance of
``f(theta') - f(theta)`` would shrink if new evaluations were made at a set of
candidate points.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize

__all__ = [
    "Evaluation",
    "GpHyperparams",
    "HyperpriorSpec",
    "GpPosterior",
    "PairGaussian",
    "SquaredExponential",
    "QuadraticBasis",
    "NoBasis",
    "GpFitError",
    "DegenerateDataError",
    "DegenerateCandidateError",
    "fit_map",
    "predict_pair",
    "sigma_t2",
    "lookahead_omega",
    "lookahead_xi2",
    "default_hyperparams",
]

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class GpFitError(RuntimeError):
    """Hyperparameter optimization produced no usable point."""

    def __init__(self, msg, last_valid=None):
        super().__init__(msg)
        self.last_valid = last_valid


class DegenerateDataError(RuntimeError):
    """Gram matrix stayed singular through the whole jitter ladder."""


class DegenerateCandidateError(RuntimeError):
    """Candidate covariance in the lookahead quadratic form is singular."""


@dataclass(frozen=True)
class Evaluation:
    theta: np.ndarray
    y: float
    noise_sd: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "noise_sd", float(self.noise_sd))


# ---------------------------------------------------------------------------
# kernel and basis


class SquaredExponential:
    """k(x, z) = s^2 exp(-sum_i (x_i - z_i)^2 / (2 l_i^2))."""

    def __init__(self, signal_sd, lengthscales):
        self.signal_sd = float(signal_sd)
        self.lengthscales = np.asarray(lengthscales, dtype=float)

    def __call__(self, X1, X2):
        A = np.atleast_2d(X1) / self.lengthscales
        B = np.atleast_2d(X2) / self.lengthscales
        d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        np.maximum(d2, 0.0, out=d2)
        return self.signal_sd**2 * np.exp(-0.5 * d2)

    def diag(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.signal_sd**2)

    def grad_second(self, Z, x):
        """d k(z_j, x) / dx for each row z_j of Z; returns (n, p)."""
        Z = np.atleast_2d(Z)
        kz = self(Z, x[None, :])[:, 0]
        return kz[:, None] * (Z - x[None, :]) / self.lengthscales**2


class QuadraticBasis:
    """h(x) = [1, x_1..x_p, x_1^2..x_p^2]."""

    def __init__(self, p):
        self.p = int(p)
        self.q = 2 * self.p + 1

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.hstack([np.ones((X.shape[0], 1)), X, X * X])

    def jacobian(self, x):
        p = self.p
        J = np.zeros((self.q, p))
        J[1 : p + 1] = np.eye(p)
        J[p + 1 :] = np.diag(2.0 * np.asarray(x, dtype=float))
        return J


class NoBasis:
    """Zero-mean prior, no explicit basis."""

    def __init__(self, p):
        self.p = int(p)
        self.q = 0

    def __call__(self, X):
        return np.zeros((np.atleast_2d(X).shape[0], 0))

    def jacobian(self, x):
        return np.zeros((0, self.p))


def make_basis(kind, p):
    if kind == "quadratic":
        return QuadraticBasis(p)
    if kind == "none":
        return NoBasis(p)
    raise ValueError(f"unknown basis {kind!r}")


# ---------------------------------------------------------------------------
# hyperparameters


@dataclass
class GpHyperparams:
    """Kernel, noise and basis-prior hyperparameters.

    ``noise_sd_global`` set means the data noise is one shared sd, which
    overrides the per-evaluation ``noise_sd`` fields. ``basis`` is either
    ``"quadratic"`` or ``"none"``.
    """

    signal_sd: float
    lengthscales: np.ndarray
    noise_sd_global: float | None = None
    basis: str = "quadratic"
    basis_prior_mean: np.ndarray | None = None
    basis_prior_cov: np.ndarray | None = None

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        q = make_basis(self.basis, self.lengthscales.size).q
        if self.basis_prior_mean is None:
            self.basis_prior_mean = np.zeros(q)
        if self.basis_prior_cov is None:
            self.basis_prior_cov = 30.0**2 * np.eye(q)
        self.basis_prior_mean = np.asarray(self.basis_prior_mean, dtype=float).reshape(q)
        self.basis_prior_cov = np.asarray(self.basis_prior_cov, dtype=float).reshape(q, q)
        if self.signal_sd <= 0 or np.any(self.lengthscales <= 0):
            raise ValueError("scale hyperparameters must be positive")
        if self.noise_sd_global is not None and self.noise_sd_global <= 0:
            raise ValueError("noise_sd_global must be positive")

    @property
    def p(self):
        return self.lengthscales.size

    def to_dict(self):
        return {
            "signal_sd": float(self.signal_sd),
            "lengthscales": self.lengthscales.tolist(),
            "noise_sd_global": None if self.noise_sd_global is None else float(self.noise_sd_global),
            "basis": self.basis,
            "basis_prior_mean": self.basis_prior_mean.tolist(),
            "basis_prior_cov": self.basis_prior_cov.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            signal_sd=d["signal_sd"],
            lengthscales=np.asarray(d["lengthscales"]),
            noise_sd_global=d.get("noise_sd_global"),
            basis=d.get("basis", "quadratic"),
            basis_prior_mean=np.asarray(d["basis_prior_mean"]) if "basis_prior_mean" in d else None,
            basis_prior_cov=np.asarray(d["basis_prior_cov"]) if "basis_prior_cov" in d else None,
        )


def default_hyperparams(p, estimate_noise=False, basis="quadratic"):
    return GpHyperparams(
        signal_sd=1.0,
        lengthscales=np.ones(p),
        noise_sd_global=1.0 if estimate_noise else None,
        basis=basis,
    )


@dataclass
class HyperpriorSpec:
    """Box bounds of the log-uniform hyperprior.

    Lengthscale bounds are relative to the per-dimension span of the data.
    A global noise sd is only estimated once the data leave some residual
    degrees of freedom: with ``t < q + p + 2`` points (q basis functions,
    p + 2 hyperparameters) the basis can interpolate the data and the noise
    collapses to its lower bound, so it is held at its current value instead.
    """

    signal_sd: tuple = (1e-3, 1e3)
    lengthscale_rel: tuple = (1e-3, 10.0)
    noise_sd: tuple = (1e-2, 1e2)
    estimate_noise: bool = False
    n_starts: int = 3
    maxiter: int = 200

    def noise_identifiable(self, t, p, basis_kind="quadratic"):
        return t >= make_basis(basis_kind, p).q + p + 2


# ---------------------------------------------------------------------------
# posterior


@dataclass
class PairGaussian:
    mean2: np.ndarray
    cov2: np.ndarray


def _noise_var(hp, noise_sds):
    if hp.noise_sd_global is not None:
        return np.full(noise_sds.shape, hp.noise_sd_global**2)
    return noise_sds**2


def _chol_with_jitter(M, scale):
    """Cholesky with the diagonal floored at JITTER_START*scale, escalating x10."""
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    jit = 0.0
    base = JITTER_START * scale
    while True:
        try:
            L = cholesky(M + jit * np.eye(n), lower=True, check_finite=True)
            return L, jit
        except (np.linalg.LinAlgError, ValueError):
            jit = base if jit == 0.0 else jit * 10.0
            if jit > JITTER_MAX * scale * (1 + 1e-9):
                raise DegenerateDataError("Gram matrix not positive definite after jitter")


class GpPosterior:
    """GP posterior given data D_t and fixed hyperparameters.

    Immutable after construction. All query methods accept a single point or
    an (n, p) array of points.
    """

    def __init__(self, hyperparams: GpHyperparams, data: Sequence[Evaluation] = ()):
        self.hyperparams = hyperparams
        self.data = list(data)
        p = hyperparams.p
        self.p = p
        self.kernel = SquaredExponential(hyperparams.signal_sd, hyperparams.lengthscales)
        self.basis = make_basis(hyperparams.basis, p)
        q = self.basis.q
        t = len(self.data)
        self.t = t
        if t:
            self.X = np.vstack([e.theta for e in self.data])
            if self.X.shape[1] != p:
                raise ValueError("evaluation dimension does not match lengthscales")
            self.y = np.array([e.y for e in self.data])
            noise_sds = np.array([e.noise_sd for e in self.data])
        else:
            self.X = np.zeros((0, p))
            self.y = np.zeros(0)
            noise_sds = np.zeros(0)
        self.noise_var = _noise_var(hyperparams, noise_sds)
        s2 = hyperparams.signal_sd**2
        # the smallest jitter rung doubles as a floor on the noise variance
        diag = np.maximum(self.noise_var, JITTER_START * s2)
        K = self.kernel(self.X, self.X) + np.diag(diag) if t else np.zeros((0, 0))
        self.L, self.jitter = _chol_with_jitter(K, s2)

        b = hyperparams.basis_prior_mean
        Bm = hyperparams.basis_prior_cov
        self.Hd = self.basis(self.X)  # (t, q)
        if q:
            Binv = np.linalg.inv(Bm)
            if t:
                self.W = solve_triangular(self.L, self.Hd, lower=True)  # L^-1 H^T
                wy = solve_triangular(self.L, self.y, lower=True)
                A = Binv + self.W.T @ self.W
                rhs = self.W.T @ wy + Binv @ b
            else:
                self.W = np.zeros((0, q))
                A = Binv
                rhs = Binv @ b
            A = 0.5 * (A + A.T)
            self.LA = cholesky(A, lower=True)
            self.beta_bar = cho_solve((self.LA, True), rhs)
        else:
            self.W = np.zeros((t, 0))
            self.LA = np.zeros((0, 0))
            self.beta_bar = np.zeros(0)
        if t:
            resid = self.y - self.Hd @ self.beta_bar
            self.alpha = cho_solve((self.L, True), resid)
        else:
            self.alpha = np.zeros(0)

    # -- internal helpers --------------------------------------------------

    def _prep(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ValueError(f"query dimension {X.shape[1]} != {self.p}")
        Kx = self.kernel(X, self.X)  # (n, t)
        V = solve_triangular(self.L, Kx.T, lower=True) if self.t else np.zeros((0, X.shape[0]))
        R = self.basis(X) - V.T @ self.W  # (n, q)
        G = solve_triangular(self.LA, R.T, lower=True) if self.basis.q else np.zeros((0, X.shape[0]))
        return X, Kx, V, R, G

    # -- queries -----------------------------------------------------------

    def mean(self, X):
        X, Kx, V, R, G = self._prep(X)
        return Kx @ self.alpha + self.basis(X) @ self.beta_bar

    def var(self, X):
        X, Kx, V, R, G = self._prep(X)
        v = self.kernel.diag(X) - (V * V).sum(0) + (G * G).sum(0)
        return np.maximum(v, 0.0)

    def cov(self, X1, X2):
        X1, _, V1, _, G1 = self._prep(X1)
        X2, _, V2, _, G2 = self._prep(X2)
        return self.kernel(X1, X2) - V1.T @ V2 + G1.T @ G2

    def mean_cov(self, X):
        X, Kx, V, R, G = self._prep(X)
        m = Kx @ self.alpha + self.basis(X) @ self.beta_bar
        C = self.kernel(X, X) - V.T @ V + G.T @ G
        return m, 0.5 * (C + C.T)

    def condition(self, new_data: Sequence[Evaluation]):
        """Same hyperparameters, data extended by ``new_data``."""
        return GpPosterior(self.hyperparams, self.data + list(new_data))

    def with_hyperparams(self, hyperparams):
        return GpPosterior(hyperparams, self.data)

    # -- lookahead pieces (single candidate, with gradient) ----------------

    def _cross_with_grad(self, x, anchors):
        """c(a_j, x) for anchors a_j, s^2(x), and their gradients in x."""
        x = np.asarray(x, dtype=float)
        A = np.atleast_2d(anchors)
        _, _, Va, _, Ga = self._prep(A)  # Va (t, m), Ga (q, m)
        kx = self.kernel(self.X, x[None, :])[:, 0] if self.t else np.zeros(0)
        Jk = self.kernel.grad_second(self.X, x) if self.t else np.zeros((0, self.p))
        if self.t:
            vx = solve_triangular(self.L, kx, lower=True)
            dV = solve_triangular(self.L, Jk, lower=True)
        else:
            vx = np.zeros(0)
            dV = np.zeros((0, self.p))
        rx = self.basis(x[None, :])[0] - self.W.T @ vx
        Jr = self.basis.jacobian(x) - self.W.T @ dV  # (q, p)
        if self.basis.q:
            gx = solve_triangular(self.LA, rx, lower=True)
            dG = solve_triangular(self.LA, Jr, lower=True)
        else:
            gx = np.zeros(0)
            dG = np.zeros((0, self.p))
        kax = self.kernel(A, x[None, :])[:, 0]
        dkax = self.kernel.grad_second(A, x)  # (m, p)
        c = kax - Va.T @ vx + Ga.T @ gx
        dc = dkax - Va.T @ dV + Ga.T @ dG
        s2 = self.kernel.signal_sd**2 - vx @ vx + gx @ gx
        ds2 = -2.0 * vx @ dV + 2.0 * gx @ dG
        return c, dc, s2, ds2

    def xi2_grad(self, theta, theta_prime, x, noise_sd):
        """xi^2(theta, theta'; x) for one candidate and its gradient in x."""
        c, dc, s2, ds2 = self._cross_with_grad(x, np.vstack([theta, theta_prime]))
        d = c[0] - c[1]
        dd = dc[0] - dc[1]
        v = max(s2, 0.0) + noise_sd**2
        if v <= 0.0:
            return 0.0, np.zeros(self.p)
        val = d * d / v
        grad = 2.0 * d * dd / v - d * d * ds2 / v**2
        return val, grad

    def xi2_many(self, theta, theta_prime, Xc, noise_sd):
        """xi^2 for many single-point candidates (rows of Xc)."""
        Xc = np.atleast_2d(Xc)
        C = self.cov(np.vstack([theta, theta_prime]), Xc)
        d = C[0] - C[1]
        v = self.var(Xc) + np.broadcast_to(np.asarray(noise_sd, dtype=float) ** 2, d.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(v > 0, d * d / v, 0.0)
        return out

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "hyperparams": self.hyperparams.to_dict(),
            "data": [
                {"theta": e.theta.tolist(), "y": e.y, "noise_sd": e.noise_sd} for e in self.data
            ],
        }

    @classmethod
    def from_dict(cls, d):
        hp = GpHyperparams.from_dict(d["hyperparams"])
        data = [Evaluation(np.asarray(e["theta"]), e["y"], e["noise_sd"]) for e in d["data"]]
        return cls(hp, data)


# ---------------------------------------------------------------------------
# functional interface


def predict_pair(gp: GpPosterior, theta, theta_prime) -> PairGaussian:
    m, C = gp.mean_cov(np.vstack([theta, theta_prime]))
    return PairGaussian(mean2=m, cov2=C)


def sigma_t2(gp: GpPosterior, theta, theta_prime) -> float:
    """Var[f(theta') - f(theta) | D_t], clamped at zero."""
    C = gp.mean_cov(np.vstack([theta, theta_prime]))[1]
    return max(C[0, 0] + C[1, 1] - 2.0 * C[0, 1], 0.0)


def _candidate_solve(gp, cands, noise_sds):
    cands = np.atleast_2d(cands)
    noise_sds = np.broadcast_to(np.asarray(noise_sds, dtype=float), (cands.shape[0],))
    if np.any(~np.isfinite(noise_sds)) or np.any(noise_sds < 0):
        raise ValueError("candidate noise sds must be finite and non-negative")
    M = gp.cov(cands, cands) + np.diag(noise_sds**2)
    M = 0.5 * (M + M.T)
    try:
        L, _ = _chol_with_jitter(M, gp.hyperparams.signal_sd**2)
    except DegenerateDataError as exc:
        raise DegenerateCandidateError(str(exc)) from exc
    return cands, L


def lookahead_omega(gp: GpPosterior, a, b, cands, noise_sds) -> float:
    """omega(a, b; cands) = c(a, X*) [c(X*, X*) + Lambda*]^-1 c(X*, b)."""
    cands, L = _candidate_solve(gp, cands, noise_sds)
    ca = solve_triangular(L, gp.cov(np.atleast_2d(a), cands)[0], lower=True)
    cb = solve_triangular(L, gp.cov(np.atleast_2d(b), cands)[0], lower=True)
    return float(ca @ cb)


def lookahead_xi2(gp: GpPosterior, theta, theta_prime, cands, noise_sds) -> float:
    """Variance reduction of f(theta') - f(theta) from evaluating at ``cands``.

    Computed as the quadratic form d^T [c(X*, X*) + Lambda*]^-1 d with
    d = c(theta, X*) - c(theta', X*), which is symmetric by construction.
    """
    cands, L = _candidate_solve(gp, cands, noise_sds)
    C = gp.cov(np.vstack([theta, theta_prime]), cands)
    w = solve_triangular(L, C[0] - C[1], lower=True)
    return float(max(w @ w, 0.0))


# ---------------------------------------------------------------------------
# MAP fitting


def _pack(hp: GpHyperparams, estimate_noise):
    v = [np.log(hp.signal_sd)] + list(np.log(hp.lengthscales))
    if estimate_noise:
        v.append(np.log(hp.noise_sd_global if hp.noise_sd_global is not None else 1.0))
    return np.array(v)


def _unpack(v, template: GpHyperparams, estimate_noise):
    p = template.p
    return replace(
        template,
        signal_sd=float(np.exp(v[0])),
        lengthscales=np.exp(v[1 : p + 1]),
        noise_sd_global=float(np.exp(v[p + 1])) if estimate_noise else template.noise_sd_global,
    )


def _neg_log_marginal(v, X, y, noise_sds, template, estimate_noise, basis):
    """Negative log N(y | H b, K + H B H^T) and its gradient in log-space."""
    p = template.p
    s2 = np.exp(2 * v[0])
    ell = np.exp(v[1 : p + 1])
    t = X.shape[0]
    Z = X / ell
    d2 = (Z * Z).sum(1)[:, None] + (Z * Z).sum(1)[None, :] - 2 * Z @ Z.T
    np.maximum(d2, 0, out=d2)
    Kk = s2 * np.exp(-0.5 * d2)
    if estimate_noise:
        nv = np.full(t, np.exp(2 * v[p + 1]))
    elif template.noise_sd_global is not None:
        nv = np.full(t, template.noise_sd_global**2)
    else:
        nv = noise_sds**2
    floor = JITTER_START * s2
    nv_eff = np.maximum(nv, floor)
    H = basis(X)
    Ky = Kk + np.diag(nv_eff)
    if basis.q:
        Ky = Ky + H @ template.basis_prior_cov @ H.T
    r = y - H @ template.basis_prior_mean
    L, jit = _chol_with_jitter(Ky, s2)
    alpha = cho_solve((L, True), r)
    nll = 0.5 * r @ alpha + np.log(np.diag(L)).sum() + 0.5 * t * np.log(2 * np.pi)
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise DegenerateDataError("inverse of Gram matrix failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    Q = np.outer(alpha, alpha) - Kinv  # d nll = -0.5 tr(Q dK)
    M = Q * Kk
    g = np.empty_like(v)
    g[0] = -np.sum(M)
    # sum_jk M_jk (x_ji - x_ki)^2 = 2 sum_j x_ji^2 r_j - 2 x_i^T M x_i
    r = M.sum(1)
    quad = 2.0 * (X * X * r[:, None]).sum(0) - 2.0 * ((M @ X) * X).sum(0)
    g[1 : p + 1] = -0.5 * quad / ell**2
    if estimate_noise:
        dn = np.where(nv >= floor, 2.0 * nv, 0.0)
        g[p + 1] = -0.5 * np.sum(np.diag(Q) * dn)
    return nll, g


def _bounds(X, spec: HyperpriorSpec, estimate_noise):
    span = X.max(0) - X.min(0) if X.shape[0] > 1 else np.ones(X.shape[1])
    span = np.where(span > 0, span, 1.0)
    lo = [np.log(spec.signal_sd[0])] + list(np.log(spec.lengthscale_rel[0] * span))
    hi = [np.log(spec.signal_sd[1])] + list(np.log(spec.lengthscale_rel[1] * span))
    if estimate_noise:
        lo.append(np.log(spec.noise_sd[0]))
        hi.append(np.log(spec.noise_sd[1]))
    return np.array(lo), np.array(hi)


def log_marginal_likelihood(hp: GpHyperparams, data: Sequence[Evaluation]) -> float:
    X = np.vstack([e.theta for e in data])
    y = np.array([e.y for e in data])
    ns = np.array([e.noise_sd for e in data])
    est = False
    v = _pack(hp, est)
    nll, _ = _neg_log_marginal(v, X, y, ns, hp, est, make_basis(hp.basis, hp.p))
    return -nll


def fit_map(
    data: Sequence[Evaluation],
    hyperprior: HyperpriorSpec | None = None,
    init: GpHyperparams | None = None,
    rng: np.random.Generator | None = None,
) -> GpPosterior:
    """MAP hyperparameters under a log-uniform box hyperprior.

    The first start is ``init`` (clipped into the box); further starts are
    uniform in the log-box and drawn from ``rng``. With a log-uniform prior
    the MAP point is the constrained maximum of the marginal likelihood.
    """
    if not data:
        raise ValueError("fit_map needs at least one evaluation")
    spec = hyperprior or HyperpriorSpec()
    X = np.vstack([e.theta for e in data])
    y = np.array([e.y for e in data])
    ns = np.array([e.noise_sd for e in data])
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(ns))):
        raise ValueError("data contains non-finite values")
    p = X.shape[1]
    est = spec.estimate_noise
    if init is None:
        init = default_hyperparams(p, estimate_noise=est)
        resid_sd = float(np.std(y)) if y.size > 1 else 1.0
        init = replace(init, signal_sd=min(max(resid_sd, 1e-2), 1e2))
        span = X.max(0) - X.min(0) if X.shape[0] > 1 else np.ones(p)
        init = replace(init, lengthscales=np.where(span > 0, span / 2, 1.0))
    if est and init.noise_sd_global is None:
        init = replace(init, noise_sd_global=1.0)
    if est and not spec.noise_identifiable(len(data), p, init.basis):
        est = False  # too few points; keep init's noise sd fixed
    basis = make_basis(init.basis, p)
    lo, hi = _bounds(X, spec, est)
    starts = [np.clip(_pack(init, est), lo, hi)]
    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(max(spec.n_starts, 1) - 1):
        starts.append(rng.uniform(lo, hi))

    best = None
    last_valid = None

    def fun(v):
        try:
            f, g = _neg_log_marginal(v, X, y, ns, init, est, basis)
        except DegenerateDataError:
            return 1e300, np.zeros_like(v)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(v)
        return f, g

    for v0 in starts:
        f0, _ = fun(v0)
        if f0 < 1e300:
            last_valid = v0
            if best is None or f0 < best[0]:
                best = (f0, v0)
        res = minimize(fun, v0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"maxiter": spec.maxiter})
        if np.isfinite(res.fun) and res.fun < 1e300 and (best is None or res.fun < best[0]):
            best = (float(res.fun), np.asarray(res.x))
    if best is None:
        raise GpFitError(
            "marginal likelihood non-finite at every start",
            last_valid=None if last_valid is None else _unpack(last_valid, init, est),
        )
    hp = _unpack(best[1], init, est)
    return GpPosterior(hp, data)
