"""
GP-emulated Metropolis-Hastings and its surrogate-posterior variant.

GP-MH runs a random-walk MH chain where each accept/reject decision is made
with the median estimate of the acceptance ratio under a GP surrogate of the
log-likelihood. When the probability of a wrong decision exceeds epsilon, new
noisy log-likelihood evaluations are collected until it does not.

MH-BLFI uses the same emulated chain only to decide where to evaluate, and
samples the final answer from a GP-based estimate of the posterior.

Random streams are split from a single seed: ``init`` (initial design),
``chain`` (proposal increments), ``u`` (uniform variates), ``design``
(strategy randomness), ``lik`` (the noisy log-likelihood) and ``fit``
(multistart of the hyperparameter fit).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .decision import Decision, PairStats, SIGMA_ZERO, decide, pair_stats
from .design import DesignStrategy, select_with_role
from .gp import (
    DegenerateDataError,
    Evaluation,
    GpFitError,
    GpHyperparams,
    GpPosterior,
    HyperpriorSpec,
    fit_map,
)

log = logging.getLogger(__name__)

__all__ = [
    "ValidityPolicy",
    "RunConfig",
    "RunResult",
    "AdaptiveProposal",
    "ChainTerminated",
    "InitializationError",
    "make_streams",
    "run_gp_mh",
    "run_mh_blfi",
    "run_reference_mh",
    "surrogate_log_target",
    "markov_path_sampler",
    "markov_path_logprob",
]

STREAMS = ("init", "chain", "u", "design", "lik", "fit")


def make_streams(seed):
    ss = np.random.SeedSequence(seed)
    return dict(zip(STREAMS, (np.random.default_rng(s) for s in ss.spawn(len(STREAMS)))))


class InitializationError(RuntimeError):
    """Too few valid initial evaluations."""


class ChainTerminated(RuntimeError):
    """Invalid evaluation at the current point; carries partial results."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass
class ValidityPolicy:
    abs_y_max: float = 1e5
    noise_sd_max: float = 1e3
    init_try_multiplier: int = 2

    def ok(self, y, noise_sd, valid=True):
        if not valid:
            return False
        if isinstance(y, complex) or isinstance(noise_sd, complex):
            return False
        if not (np.isfinite(y) and np.isfinite(noise_sd)):
            return False
        return abs(y) <= self.abs_y_max and 0 <= noise_sd <= self.noise_sd_max


@dataclass
class RunConfig:
    epsilon: float = 0.2
    i_mh: int = 10_000
    t_init: int = 10
    initial_point: np.ndarray | None = None
    initial_proposal_cov: np.ndarray | None = None
    max_total_evals: int | None = None
    max_evals_per_iteration: int = 1000
    burn_in_fraction: float = 0.25
    strategy: DesignStrategy = field(default_factory=DesignStrategy)
    error_kind: str = "unconditional"
    seed: int = 0
    # GP handling
    estimate_noise: bool = False
    hyperprior: HyperpriorSpec | None = None
    refit: bool = True
    refit_every_until: int = 300
    refit_period: int = 10
    warm_refit_starts: int = 1
    full_refit_period: int = 25
    initial_data: Sequence[Evaluation] | None = None
    initial_hyperparams: GpHyperparams | None = None
    # adaptation
    adapt: bool = True
    n_adapt_start: int = 200
    adapt_delta: float = 1e-8
    # MH-BLFI
    t_max: int | None = None
    s_mcmc: int = 100_000
    blfi_estimator: str = "mode"
    max_transition_attempts: int = 100_000

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.t_init < 1:
            raise ValueError("t_init must be at least 1")
        if self.initial_point is not None:
            self.initial_point = np.asarray(self.initial_point, dtype=float)
        if self.initial_proposal_cov is not None:
            self.initial_proposal_cov = np.atleast_2d(np.asarray(self.initial_proposal_cov, dtype=float))


@dataclass
class RunResult:
    samples: np.ndarray
    evaluations: list
    gp: GpPosterior | None
    eval_counts: np.ndarray  # cumulative evaluations after each iteration
    hyper_history: list
    diagnostics: dict
    surrogate_samples: np.ndarray | None = None

    def post_burn_in(self, fraction=0.25):
        n = self.samples.shape[0]
        return self.samples[int(np.floor(fraction * n)) :]


class AdaptiveProposal:
    """Haario-style adaptive Gaussian proposal covariance.

    Before ``n_start`` samples have been seen the initial covariance is used;
    afterwards s_d^2 (C_n + delta I), with C_n the running sample covariance
    (divisor n - 1) and s_d^2 = 2.4^2 / p.
    """

    def __init__(self, cov0, n_start=200, delta=1e-8, enabled=True):
        self.cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
        self.p = self.cov0.shape[0]
        self.n_start = int(n_start)
        self.delta = float(delta)
        self.enabled = enabled
        self.sd2 = 2.4**2 / self.p
        self.n = 0
        self.mean = np.zeros(self.p)
        self.scatter = np.zeros((self.p, self.p))
        self._chol = np.linalg.cholesky(self.cov0)
        self._chol_cov = self.cov0

    def update(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.scatter += np.outer(d, x - self.mean)

    @property
    def empirical_cov(self):
        if self.n < 2:
            return np.zeros((self.p, self.p))
        return self.scatter / (self.n - 1)

    @property
    def cov(self):
        if not self.enabled or self.n < self.n_start:
            return self.cov0
        C = self.empirical_cov
        return self.sd2 * (0.5 * (C + C.T) + self.delta * np.eye(self.p))

    def chol(self):
        C = self.cov
        if C is not self._chol_cov:
            try:
                self._chol = np.linalg.cholesky(C)
            except np.linalg.LinAlgError:
                self._chol = np.linalg.cholesky(C + self.sd2 * 1e-6 * np.trace(C) / self.p * np.eye(self.p))
            self._chol_cov = C
        return self._chol


def adapt_proposal(state: AdaptiveProposal, new_sample):
    state.update(new_sample)
    return state.cov


# ---------------------------------------------------------------------------
# helpers shared by GP-MH and MH-BLFI


class _Emulator:
    """Evaluation set, GP and refit schedule for one run."""

    def __init__(self, target, prior, config: RunConfig, policy: ValidityPolicy, streams):
        self.target = target
        self.prior = prior
        self.cfg = config
        self.policy = policy
        self.s = streams
        self.data: list[Evaluation] = []
        self.eval_count = 0
        self.n_invalid = 0
        self.n_init_tries = 0
        self.hyper_history = []
        self.n_refits = 0
        p = prior.dim
        self.spec = config.hyperprior or HyperpriorSpec(estimate_noise=config.estimate_noise)
        if config.estimate_noise and not self.spec.estimate_noise:
            self.spec = HyperpriorSpec(**{**self.spec.__dict__, "estimate_noise": True})
        self.p = p

    def evaluate(self, theta):
        y, sd, valid = self.target.evaluate(theta, self.s["lik"])
        ok = self.policy.ok(y, sd, valid)
        if ok:
            return Evaluation(np.array(theta, dtype=float), float(y), float(sd))
        return None

    def initialise(self, theta0, cov0):
        cfg = self.cfg
        if cfg.initial_data is not None:
            self.data = list(cfg.initial_data)
        else:
            L = np.linalg.cholesky(cov0)
            max_tries = self.policy.init_try_multiplier * cfg.t_init
            rng = self.s["init"]
            while len(self.data) < cfg.t_init and self.n_init_tries < max_tries:
                # draws outside the prior support are redrawn, not counted
                for _ in range(10_000):
                    th = theta0 + L @ rng.standard_normal(self.p)
                    if self.prior.contains(th):
                        break
                self.n_init_tries += 1
                ev = self.evaluate(th)
                if ev is None:
                    self.n_invalid += 1
                else:
                    self.data.append(ev)
            if len(self.data) < cfg.t_init:
                raise InitializationError(
                    f"only {len(self.data)} valid initial evaluations in {self.n_init_tries} tries"
                )
        if cfg.initial_hyperparams is not None and not cfg.refit:
            self.gp = GpPosterior(cfg.initial_hyperparams, self.data)
        else:
            init_hp = cfg.initial_hyperparams
            self.gp = self._fit(init_hp, n_starts=self.spec.n_starts)
        self.t_init = len(self.data)
        self._record()

    def _fit(self, init, n_starts):
        spec = HyperpriorSpec(**{**self.spec.__dict__, "n_starts": n_starts})
        try:
            gp = fit_map(self.data, spec, init=init, rng=self.s["fit"])
        except GpFitError as exc:
            if exc.last_valid is not None:
                return GpPosterior(exc.last_valid, self.data)
            if init is not None:
                return GpPosterior(init, self.data)
            raise
        self.n_refits += 1
        return gp

    def _record(self):
        self.hyper_history.append({"t": len(self.data), **self.gp.hyperparams.to_dict()})

    def add(self, ev: Evaluation):
        self.data.append(ev)
        t = len(self.data)
        cfg = self.cfg
        due = t <= cfg.refit_every_until or (t - cfg.refit_every_until) % cfg.refit_period == 0
        if cfg.refit and due:
            full = cfg.full_refit_period > 0 and (t % cfg.full_refit_period == 0)
            n_starts = self.spec.n_starts if full else cfg.warm_refit_starts
            self.gp = self._fit(self.gp.hyperparams, n_starts=n_starts)
            self._record()
        else:
            try:
                self.gp = self.gp.condition([ev])
            except DegenerateDataError:
                self.gp = self._fit(self.gp.hyperparams, n_starts=self.spec.n_starts)
                self._record()

    def acquire(self, theta, theta_prime):
        """One evaluation for the pending pair. Returns 'ok', 'reject' or 'terminate'."""
        strategy = self.cfg.strategy
        x, role = select_with_role(self.gp, theta, theta_prime, strategy, self.prior.bounds, self.s["design"])
        self.eval_count += 1
        ev = self.evaluate(x)
        if ev is None and role == "interior":
            self.n_invalid += 1
            naive = DesignStrategy(kind="naive")
            x, role = select_with_role(self.gp, theta, theta_prime, naive, self.prior.bounds, self.s["design"])
            self.eval_count += 1
            ev = self.evaluate(x)
        if ev is None:
            self.n_invalid += 1
            return "reject" if role == "proposed" else "terminate"
        self.add(ev)
        return "ok"


def _log_prior(prior):
    return prior.logpdf


def _defaults(prior, config):
    theta0 = config.initial_point
    if theta0 is None:
        raise ValueError("initial_point is required")
    cov0 = config.initial_proposal_cov
    if cov0 is None:
        cov0 = np.eye(prior.dim)
    if not np.isfinite(prior.logpdf(theta0)):
        raise ValueError("initial point has zero prior density")
    return np.asarray(theta0, dtype=float), cov0


def _draw_u(rng):
    # uniform on (0, 1]
    return 1.0 - rng.random()


# ---------------------------------------------------------------------------
# GP-MH


def run_gp_mh(target, prior, config: RunConfig, policy: ValidityPolicy | None = None,
              callback: Callable | None = None, snapshots: Sequence[int] = ()):
    """Approximate GP-emulated MH.

    ``callback(i, state)`` is called after iteration ``i`` (1-based) for each
    ``i`` in ``snapshots``; ``state`` has keys samples, gp, eval_count.
    """
    policy = policy or ValidityPolicy()
    theta0, cov0 = _defaults(prior, config)
    streams = make_streams(config.seed)
    em = _Emulator(target, prior, config, policy, streams)
    em.initialise(theta0, cov0)

    p = prior.dim
    n = int(config.i_mh)
    samples = np.empty((n, p))
    eval_counts = np.zeros(n, dtype=np.int64)
    per_iter = np.zeros(n, dtype=np.int64)
    prop = AdaptiveProposal(cov0, config.n_adapt_start, config.adapt_delta, enabled=config.adapt)
    lp = _log_prior(prior)
    snaps = set(int(s) for s in snapshots)
    forced, prior_rej, invalid_rej, accepted = [], 0, 0, 0
    budget_hit = False
    theta = theta0.copy()
    termination = None

    for i in range(n):
        z = streams["chain"].standard_normal(p)
        u = _draw_u(streams["u"])
        theta_prime = theta + prop.chol() @ z
        move = False
        if not np.isfinite(lp(theta_prime)):
            prior_rej += 1
        else:
            n_it = 0
            while True:
                stats = pair_stats(em.gp, theta, theta_prime, lp)
                d = decide(stats, u, config.epsilon, config.error_kind)
                if isinstance(d, Decision):
                    move = d.accepted
                    break
                cap = config.max_total_evals is not None and em.eval_count >= config.max_total_evals
                if n_it >= config.max_evals_per_iteration or cap:
                    budget_hit = budget_hit or cap
                    forced.append(i)
                    move = stats.mu_t >= np.log(u)
                    break
                before = em.eval_count
                status = em.acquire(theta, theta_prime)
                n_it += em.eval_count - before
                if status == "reject":
                    invalid_rej += 1
                    move = False
                    break
                if status == "terminate":
                    termination = f"invalid evaluation at current point (iteration {i + 1})"
                    break
            per_iter[i] = n_it
        if termination is not None:
            samples = samples[:i]
            eval_counts = eval_counts[:i]
            break
        if move:
            theta = theta_prime
            accepted += 1
        samples[i] = theta
        eval_counts[i] = em.eval_count
        prop.update(theta)
        if (i + 1) in snaps and callback is not None:
            callback(i + 1, {"samples": samples[: i + 1], "gp": em.gp, "eval_count": em.eval_count})

    diagnostics = {
        "t_init": em.t_init,
        "n_init_tries": em.n_init_tries,
        "eval_count": em.eval_count,
        "n_valid_evals": len(em.data),
        "n_invalid_evals": em.n_invalid,
        "n_forced_decisions": len(forced),
        "forced_iterations": forced,
        "budget_exhausted": budget_hit,
        "n_prior_rejections": prior_rej,
        "n_invalid_rejections": invalid_rej,
        "acceptance_rate": accepted / max(len(samples), 1),
        "n_refits": em.n_refits,
        "max_evals_in_iteration": int(per_iter.max()) if per_iter.size else 0,
        "termination": termination,
    }
    result = RunResult(samples, em.data, em.gp, eval_counts, em.hyper_history, diagnostics)
    if termination is not None:
        raise ChainTerminated(termination, result)
    return result


# ---------------------------------------------------------------------------
# reference MH


def run_reference_mh(loglik, prior, proposal_cov, n, seed, theta0, sl=False, adapt=True,
                     n_adapt_start=200, adapt_delta=1e-8, policy: ValidityPolicy | None = None):
    """Random-walk MH on log prior + log-likelihood.

    ``loglik`` is either a callable theta -> float (exact mode) or, with
    ``sl=True``, an object with ``evaluate(theta, rng) -> (y, sd, valid)``; in
    that case the stored value at the current point is reused across
    iterations. Uses the same stream layout as :func:`run_gp_mh`, so the
    proposal increments and uniforms match for equal seeds.
    """
    policy = policy or ValidityPolicy()
    streams = make_streams(seed)
    theta = np.asarray(theta0, dtype=float).copy()
    p = theta.size
    lp = prior.logpdf if hasattr(prior, "logpdf") else prior

    def ll(th):
        if sl:
            y, sd, valid = loglik.evaluate(th, streams["lik"])
            return y if policy.ok(y, 0.0 if not np.isfinite(sd) else sd, valid) else -np.inf
        return loglik(th)

    cur = lp(theta) + ll(theta)
    if not np.isfinite(cur):
        raise ValueError("initial point has zero target density")
    prop = AdaptiveProposal(proposal_cov, n_adapt_start, adapt_delta, enabled=adapt)
    out = np.empty((n, p))
    acc = 0
    for i in range(n):
        z = streams["chain"].standard_normal(p)
        u = _draw_u(streams["u"])
        thp = theta + prop.chol() @ z
        lpp = lp(thp)
        if np.isfinite(lpp):
            new = lpp + ll(thp)
            if np.isfinite(new) and new - cur >= np.log(u):
                theta, cur = thp, new
                acc += 1
        out[i] = theta
        prop.update(theta)
    return out


# ---------------------------------------------------------------------------
# MH-BLFI


def surrogate_log_target(gp: GpPosterior, prior, estimator="mode"):
    """log pi(theta) + m_t(theta) [- s_t^2(theta) for the mode estimator]."""
    def f(theta):
        lp = prior.logpdf(theta)
        if not np.isfinite(lp):
            return -np.inf
        m = gp.mean(theta)[0]
        if estimator == "mode":
            return lp + m - gp.var(theta)[0]
        return lp + m
    return f


def run_mh_blfi(target, prior, config: RunConfig, policy: ValidityPolicy | None = None,
                callback: Callable | None = None, snapshots: Sequence[int] = ()):
    """Evaluation collection driven by the emulated chain, then surrogate MCMC.

    ``snapshots`` here are evaluation counts t; ``callback(t, state)`` gets
    the current GP.
    """
    policy = policy or ValidityPolicy()
    theta0, cov0 = _defaults(prior, config)
    streams = make_streams(config.seed)
    em = _Emulator(target, prior, config, policy, streams)
    em.initialise(theta0, cov0)
    t_max = config.t_max if config.t_max is not None else len(em.data)
    p = prior.dim
    prop = AdaptiveProposal(cov0, config.n_adapt_start, config.adapt_delta, enabled=config.adapt)
    lp = _log_prior(prior)
    snaps = set(int(s) for s in snapshots)

    theta = theta0.copy()

    def new_pair(th):
        z = streams["chain"].standard_normal(p)
        return th + prop.chol() @ z, _draw_u(streams["u"])

    theta_prime, u = new_pair(theta)
    cap_hit = False
    termination = None
    n_transitions = 0
    t_init = em.t_init
    while len(em.data) < t_max:
        # iterative form of the tail recursion over uncertain transitions
        attempts = 0
        found = False
        while attempts < config.max_transition_attempts:
            attempts += 1
            if np.isfinite(lp(theta_prime)):
                stats = pair_stats(em.gp, theta, theta_prime, lp)
                d = decide(stats, u, config.epsilon, config.error_kind)
                if not isinstance(d, Decision):
                    found = True
                    break
                if d.accepted:
                    theta = theta_prime
            n_transitions += 1
            prop.update(theta)
            theta_prime, u = new_pair(theta)
        if not found:
            cap_hit = True
            break
        status = em.acquire(theta, theta_prime)
        if status == "reject":
            # invalid at the proposal: treat as rejected and move on
            n_transitions += 1
            prop.update(theta)
            theta_prime, u = new_pair(theta)
        elif status == "terminate":
            termination = "invalid evaluation at current point"
            break
        if len(em.data) in snaps and callback is not None:
            callback(len(em.data), {"gp": em.gp, "eval_count": em.eval_count, "n_transitions": n_transitions})

    log_target = surrogate_log_target(em.gp, prior, config.blfi_estimator)
    surrogate = None
    if config.s_mcmc > 0 and termination is None:
        surrogate = run_reference_mh(
            log_target, lambda th: 0.0, cov0, int(config.s_mcmc), config.seed + 1_000_003,
            theta0=_best_start(em, log_target, theta0),
        )
    diagnostics = {
        "eval_count": em.eval_count,
        "n_valid_evals": len(em.data),
        "n_invalid_evals": em.n_invalid,
        "t_init": t_init,
        "recursion_cap_hit": cap_hit,
        "n_transitions": n_transitions,
        "n_refits": em.n_refits,
        "termination": termination,
    }
    result = RunResult(np.empty((0, p)), em.data, em.gp, np.zeros(0, dtype=np.int64), em.hyper_history,
                       diagnostics, surrogate_samples=surrogate)
    if termination is not None:
        raise ChainTerminated(termination, result)
    return result


def _best_start(em, log_target, fallback):
    best, val = fallback, log_target(fallback)
    for e in em.data:
        v = log_target(e.theta)
        if v > val:
            best, val = e.theta, v
    return np.asarray(best, dtype=float)


def sample_surrogate(gp, prior, n, seed, theta0, proposal_cov, estimator="mode"):
    """MCMC draws from the GP-based posterior estimate."""
    return run_reference_mh(surrogate_log_target(gp, prior, estimator), lambda th: 0.0,
                            proposal_cov, n, seed, theta0=theta0)


# ---------------------------------------------------------------------------
# Markov approximation of the uncertain MH chain


def _accept_prob(gp, theta, theta_prime, u, log_prior):
    if log_prior is not None and not np.isfinite(log_prior(theta_prime)):
        return 0.0
    lp = log_prior if log_prior is not None else (lambda th: 0.0)
    st = pair_stats(gp, theta, theta_prime, lp)
    z = st.mu_t - np.log(u)
    if st.sigma_t < SIGMA_ZERO:
        return 1.0 if z >= 0 else 0.0
    return float(ndtr(z / st.sigma_t))


def markov_path_sampler(gp: GpPosterior, theta0, u_stream, r_stream, n, rng, log_prior=None):
    """Sample one path of the time-inhomogeneous Markov approximation.

    At step i the chain moves to theta + r_i with probability
    Phi((mu_t - log u_i) / sigma_t) and stays otherwise. Returns the path
    (n + 1, p) and its log-probability.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    path = [theta.copy()]
    logp = 0.0
    us = np.asarray(u_stream, dtype=float)
    rs = np.atleast_2d(np.asarray(r_stream, dtype=float))
    for i in range(n):
        a = _accept_prob(gp, theta, theta + rs[i], us[i], log_prior)
        if rng.random() < a:
            theta = theta + rs[i]
            logp += np.log(a)
        else:
            logp += np.log1p(-a) if a < 1 else -np.inf
        path.append(theta.copy())
    return np.array(path), float(logp)


def markov_path_logprob(gp, theta0, u_stream, r_stream, moves, log_prior=None):
    """Log-probability of a given accept/stay sequence under the same chain."""
    theta = np.asarray(theta0, dtype=float).copy()
    rs = np.atleast_2d(np.asarray(r_stream, dtype=float))
    logp = 0.0
    for i, mv in enumerate(moves):
        a = _accept_prob(gp, theta, theta + rs[i], u_stream[i], log_prior)
        if mv:
            logp += np.log(a) if a > 0 else -np.inf
            theta = theta + rs[i]
        else:
            logp += np.log1p(-a) if a < 1 else -np.inf
    return float(logp)
