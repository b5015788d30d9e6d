"""
Named benchmark problems: the three 6D toy densities and the Ricker and
theta-Ricker synthetic-likelihood problems.

Observed series for the simulator problems are shipped as CSV fixtures
(``data/*.csv``) whose first line records the generating seed; they can be
rebuilt with :func:`make_fixture`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .likelihoods import (
    SlConfig,
    SyntheticLikelihood,
    ToyTarget,
    UniformBox,
    f2d,
    ricker_simulate,
    theta_ricker_simulate,
    wood_summaries,
    wood_summaries_batch,
)

__all__ = ["Problem", "PRESETS", "get_problem", "make_fixture", "load_fixture", "toy_exact_samples"]


@dataclass
class Problem:
    name: str
    target: object
    prior: UniformBox
    initial_point: np.ndarray
    initial_proposal_cov: np.ndarray
    t_init: int
    i_mh: int
    estimate_noise: bool
    info: dict = field(default_factory=dict)
    fixture_hash: str | None = None

    @property
    def dim(self):
        return self.prior.dim

    @property
    def is_simulator(self):
        return isinstance(self.target, SyntheticLikelihood)


# ---------------------------------------------------------------------------
# toys

_TOY_BASE = {"simple": 2.0, "banana": 1.0, "multimodal": 1.0}


def _toy(name, high_noise=False):
    sd = _TOY_BASE[name] * (2.0 if high_noise else 1.0)
    tgt = ToyTarget(name, noise_sd=sd)
    return Problem(
        name=f"{name}_high" if high_noise else name,
        target=tgt,
        prior=tgt.prior(),
        initial_point=tgt.initial_point(),
        initial_proposal_cov=np.eye(6),
        t_init=10,
        i_mh=100_000,
        estimate_noise=True,
        info={"density": name, "noise_sd": sd},
    )


def _block_samples(name, n, rng, lo, hi):
    """Exact draws of one 2D block restricted to the box [lo, hi]."""
    rho = {"simple": 0.25, "banana": 0.9, "multimodal": 0.5}[name]
    out = np.empty((0, 2))
    while out.shape[0] < n:
        m = 2 * (n - out.shape[0]) + 100
        if name == "multimodal":
            # b = th2^2 - 2 is N(0, 1) marginally, so p(th2) ~ exp(-(th2^2 - 2)^2 / 2);
            # rejection from the uniform on [lo2, hi2] (density max is 1)
            t2 = rng.uniform(lo[1], hi[1], m)
            keep = rng.random(m) < np.exp(-0.5 * (t2**2 - 2.0) ** 2)
            t2 = t2[keep]
            b = t2**2 - 2.0
            t1 = rho * b + np.sqrt(1 - rho**2) * rng.standard_normal(t2.size)
            draw = np.column_stack([t1, t2])
        else:
            z = rng.standard_normal((m, 2))
            a = z[:, 0]
            b = rho * a + np.sqrt(1 - rho**2) * z[:, 1]
            draw = np.column_stack([a, b - a * a - 1.0]) if name == "banana" else np.column_stack([a, b])
        ok = np.all((draw >= lo) & (draw <= hi), axis=1)
        out = np.vstack([out, draw[ok]])
    return out[:n]


def toy_exact_samples(name, n, seed, prior=None):
    """Independent draws from the (prior-truncated) toy posterior."""
    rng = np.random.default_rng(seed)
    prior = prior or ToyTarget(name).prior()
    blocks = [
        _block_samples(name, n, rng, prior.lower[2 * i : 2 * i + 2], prior.upper[2 * i : 2 * i + 2])
        for i in range(3)
    ]
    return np.hstack(blocks)


# ---------------------------------------------------------------------------
# simulator problems

_SIM = {
    "ricker": dict(
        simulate=ricker_simulate,
        theta_true=[3.8, 10.0, 0.3],
        T=50,
        lower=[3.0, 4.0, 0.0],
        upper=[5.0, 20.0, 0.8],
        theta0=[3.4, 8.0, 0.15],
        sd0=[0.1, 1.0, 0.1],
        t_init=10,
        i_mh=100_000,
        fixture="ricker_obs.csv",
        seed=20_200,
        names=["log_r", "phi", "sigma_e"],
    ),
    "theta_ricker": dict(
        simulate=theta_ricker_simulate,
        theta_true=[3.5, 1.0, 3.5, 10.0, 0.3],
        T=100,
        lower=[2.0, 0.01, 1.0, 4.0, 0.0],
        upper=[5.0, 2.0, 5.0, 20.0, 0.8],
        theta0=[3.4, 0.9, 3.0, 8.0, 0.3],
        sd0=[0.05, 0.1, 0.25, 0.5, 0.05],
        t_init=20,
        i_mh=200_000,
        fixture="theta_ricker_obs.csv",
        seed=20_201,
        names=["log_r", "theta", "K", "phi", "sigma_e"],
    ),
}


def _data_dir():
    return resources.files("gpmh") / "data"


def make_fixture(name, path=None):
    """Simulate the observed series at theta_true and write it as CSV."""
    spec = _SIM[name]
    rng = np.random.default_rng(spec["seed"])
    while True:
        x = spec["simulate"](spec["theta_true"], spec["T"], rng)
        if wood_summaries(x)[1]:
            break
    path = Path(path) if path is not None else Path(str(_data_dir())) / spec["fixture"]
    lines = [f"# seed={spec['seed']} theta_true={','.join(str(v) for v in spec['theta_true'])}", "t,x"]
    lines += [f"{t + 1},{int(v)}" for t, v in enumerate(x)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_fixture(name):
    """Returns (series, sha256 of the fixture file)."""
    raw = (_data_dir() / _SIM[name]["fixture"]).read_bytes()
    body = [ln for ln in raw.decode().splitlines() if ln and not ln.startswith("#")][1:]
    x = np.array([float(ln.split(",")[1]) for ln in body])
    return x, hashlib.sha256(raw).hexdigest()


def _simulator_problem(name, n_reps=100, n_bootstrap=2000):
    spec = _SIM[name]
    x_obs, digest = load_fixture(name)
    s_obs, ok = wood_summaries(x_obs)
    if not ok:
        raise ValueError(f"observed series for {name} gives degenerate summaries")
    sim, T = spec["simulate"], spec["T"]

    def simulator(theta, rng, n):
        return sim(theta, T, rng, size=n)

    def summary(X):
        return wood_summaries_batch(X, reference=x_obs)

    target = SyntheticLikelihood(simulator, summary, s_obs, len(spec["theta_true"]),
                                 SlConfig(n_reps=n_reps, n_bootstrap=n_bootstrap))
    return Problem(
        name=name,
        target=target,
        prior=UniformBox(spec["lower"], spec["upper"]),
        initial_point=np.array(spec["theta0"], dtype=float),
        initial_proposal_cov=np.diag(np.square(spec["sd0"])),
        t_init=spec["t_init"],
        i_mh=spec["i_mh"],
        estimate_noise=False,
        info={
            "theta_true": list(spec["theta_true"]),
            "parameter_names": spec["names"],
            "T": T,
            "N": n_reps,
            "n_bootstrap": n_bootstrap,
            "fixture_seed": spec["seed"],
        },
        fixture_hash=digest,
    )


PRESETS = ("simple", "banana", "multimodal", "simple_high", "banana_high", "multimodal_high", "ricker", "theta_ricker")


def get_problem(name, **kw):
    """Build a named problem; ``n_reps``/``n_bootstrap`` apply to simulator problems."""
    key = name.lower()
    if key in _TOY_BASE:
        return _toy(key)
    if key.endswith("_high") and key[:-5] in _TOY_BASE:
        return _toy(key[:-5], high_noise=True)
    if key in _SIM:
        return _simulator_problem(key, **kw)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def toy_logdensity_exact(problem: Problem):
    name = problem.info["density"]

    def f(theta):
        theta = np.asarray(theta, dtype=float)
        return float(sum(f2d(name, theta[2 * i], theta[2 * i + 1]) for i in range(3)))
    return f
