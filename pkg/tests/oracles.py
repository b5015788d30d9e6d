"""Brute-force reference computations used by the tests.

Nothing here imports the package's numerical routines; each oracle works
from first principles (dense Gaussian conditioning, quadrature, Monte Carlo,
enumeration).
"""
import itertools
import math

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr


def se_kernel(A, B, sigma_s, ell):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d = (A[:, None, :] - B[None, :, :]) / np.asarray(ell)
    return sigma_s**2 * np.exp(-0.5 * (d**2).sum(-1))


def quad_basis(Z):
    Z = np.atleast_2d(Z)
    return np.hstack([np.ones((len(Z), 1)), Z, Z**2])


class DenseGP:
    """Joint Gaussian over (beta, f(Z)) conditioned on noisy data by brute force."""

    def __init__(self, X, y, noise_sds, sigma_s, ell, basis=True, B=900.0, b=0.0):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float)
        self.nv = np.asarray(noise_sds, dtype=float) ** 2
        self.sigma_s = sigma_s
        self.ell = np.asarray(ell, dtype=float)
        self.basis = basis
        p = self.X.shape[1]
        self.q = 2 * p + 1 if basis else 0
        self.B = B * np.eye(self.q)
        self.b = b * np.ones(self.q)

    def _h(self, Z):
        return quad_basis(Z) if self.basis else np.zeros((len(np.atleast_2d(Z)), 0))

    def joint(self, Q):
        """Posterior mean and covariance of f(Q) given the data."""
        Q = np.atleast_2d(Q)
        nq, t, q = len(Q), len(self.X), self.q
        Z = np.vstack([Q, self.X])
        # latent vector: [beta (q), g(Z) (nq + t)] with f = H beta + g
        n = q + nq + t
        C = np.zeros((n, n))
        C[:q, :q] = self.B
        C[q:, q:] = se_kernel(Z, Z, self.sigma_s, self.ell)
        m = np.concatenate([self.b, np.zeros(nq + t)])
        HZ = self._h(Z)
        # linear maps from latent to f(Q) and to y
        Af = np.zeros((nq, n))
        Af[:, :q] = HZ[:nq]
        Af[:, q : q + nq] = np.eye(nq)
        Ay = np.zeros((t, n))
        Ay[:, :q] = HZ[nq:]
        Ay[:, q + nq :] = np.eye(t)
        if t == 0:
            return Af @ m, Af @ C @ Af.T
        Syy = Ay @ C @ Ay.T + np.diag(self.nv)
        Sfy = Af @ C @ Ay.T
        Sff = Af @ C @ Af.T
        gain = np.linalg.solve(Syy, Sfy.T).T
        mean = Af @ m + gain @ (self.y - Ay @ m)
        cov = Sff - gain @ Sfy.T
        return mean, 0.5 * (cov + cov.T)

    def augmented(self, Xs, ys, noise_sds):
        return DenseGP(
            np.vstack([self.X, np.atleast_2d(Xs)]),
            np.concatenate([self.y, np.atleast_1d(ys)]),
            np.concatenate([np.sqrt(self.nv), np.atleast_1d(noise_sds)]),
            self.sigma_s, self.ell, self.basis, self.B[0, 0] if self.q else 900.0,
            self.b[0] if self.q else 0.0,
        )


def dense_omega(dgp, a, b, Xs, noise_sds):
    """Reduction of Cov(f(a), f(b)) from adding evaluations at Xs."""
    _, C0 = dgp.joint(np.vstack([a, b]))
    aug = dgp.augmented(Xs, np.zeros(len(np.atleast_2d(Xs))), noise_sds)
    _, C1 = aug.joint(np.vstack([a, b]))
    return C0[0, 1] - C1[0, 1], C0[0, 0] - C1[0, 0], C0[1, 1] - C1[1, 1]


def owen_t_quad(h, a):
    f = lambda x: math.exp(-0.5 * h * h * (1 + x * x)) / (1 + x * x)
    v, _ = quad(f, 0.0, a, epsabs=1e-16, epsrel=1e-13, limit=200)
    return v / (2 * math.pi)


def uncond_error_quad(mu, sigma):
    """Integral over u of Phi(-|mu - log u| / sigma) by adaptive quadrature.

    Integrates in v = log u (du = e^v dv), split at v = mu where the kink is.
    """
    f = lambda v: math.exp(v) * ndtr(-abs(mu - v) / sigma)
    kw = dict(epsabs=1e-14, epsrel=1e-12, limit=500)
    if mu >= 0:
        return quad(f, -np.inf, 0.0, **kw)[0]
    return quad(f, -np.inf, mu, **kw)[0] + quad(f, mu, 0.0, **kw)[0]


def lookahead_mc(dgp, theta, theta_prime, theta_star, star_sd, u, log_prior_ratio, n, rng):
    """Monte Carlo over y* at theta_star of the post-evaluation errors.

    Returns dict of (mean, standard error) for the conditional error at u,
    the u-averaged error (u drawn jointly), and the kappa variance at u.
    """
    P = np.vstack([theta, theta_prime, theta_star])
    m, C = dgp.joint(P)
    ys = m[2] + math.sqrt(C[2, 2] + star_sd**2) * rng.standard_normal(n)
    # the posterior mean after conditioning is affine in y*; get it exactly
    # from two dense conditionings
    a0 = dgp.augmented(theta_star, 0.0, star_sd)
    a1 = dgp.augmented(theta_star, 1.0, star_sd)
    m0, C1 = a0.joint(P[:2])
    m1, _ = a1.joint(P[:2])
    mu0 = m0[1] - m0[0] + log_prior_ratio
    slope = (m1[1] - m1[0]) - (m0[1] - m0[0])
    mus = mu0 + slope * ys
    s = math.sqrt(max(C1[0, 0] + C1[1, 1] - 2 * C1[0, 1], 0.0))
    lu = math.log(u)
    cond = ndtr(-np.abs(mus - lu) / s)
    uu = 1.0 - rng.random(n)
    unc = ndtr(-np.abs(mus - np.log(uu)) / s)
    z = (mus - lu) / s
    kv = ndtr(z) * ndtr(-z)
    out = {}
    for k, v in (("conditional", cond), ("unconditional", unc), ("kappa_var", kv)):
        out[k] = (float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)))
    return out


def enumerate_path_mass(accept_prob, theta0, us, rs):
    """Sum of probabilities of all 2^n accept/stay sequences.

    ``accept_prob(theta, theta_prime, u)`` gives the move probability.
    """
    n = len(us)
    total = 0.0
    probs = []
    for moves in itertools.product([0, 1], repeat=n):
        th = np.array(theta0, dtype=float)
        pr = 1.0
        for i, mv in enumerate(moves):
            a = accept_prob(th, th + rs[i], us[i])
            if mv:
                pr *= a
                th = th + rs[i]
            else:
                pr *= 1.0 - a
        probs.append(pr)
        total += pr
    return total, probs


def dense_joint_mp(dgp, Q, dps=50):
    """Same conditioning as DenseGP.joint, in extended precision (mpmath).

    The float64 version loses digits when the basis prior is wide; this one
    is the reference for tight relative tolerances.
    """
    import mpmath as mp

    with mp.workdps(dps):
        Q = np.atleast_2d(Q)
        Z = np.vstack([Q, dgp.X])
        nq, t = len(Q), len(dgp.X)
        ell = [mp.mpf(float(v)) for v in dgp.ell]
        ss2 = mp.mpf(float(dgp.sigma_s)) ** 2
        B = mp.mpf(float(dgp.B[0, 0])) if dgp.q else mp.mpf(0)
        Zm = [[mp.mpf(float(v)) for v in z] for z in Z]

        def h(z):
            return [mp.mpf(1)] + z + [v * v for v in z] if dgp.basis else []

        n = len(Z)
        K = mp.matrix(n, n)
        for i in range(n):
            for j in range(n):
                r2 = sum(((Zm[i][d] - Zm[j][d]) / ell[d]) ** 2 for d in range(len(ell)))
                K[i, j] = ss2 * mp.exp(-r2 / 2) + B * mp.fsum(a * b for a, b in zip(h(Zm[i]), h(Zm[j])))
        Kff = K[:nq, :nq]
        if t == 0:
            mean, cov = mp.matrix(nq, 1), Kff
        else:
            Kfy = K[:nq, nq:]
            Kyy = K[nq:, nq:]
            for i in range(t):
                Kyy[i, i] += mp.mpf(float(dgp.nv[i]))
            y = mp.matrix([mp.mpf(float(v)) for v in dgp.y])
            A = Kfy * mp.inverse(Kyy)
            mean, cov = A * y, Kff - A * Kfy.T
        return (np.array([float(mean[i]) for i in range(nq)]),
                np.array([[float(cov[i, j]) for j in range(nq)] for i in range(nq)]),
                cov)
