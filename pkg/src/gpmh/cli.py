"""
Command-line experiment runner.

    gpmh run CONFIG.json [--jobs N] [--output DIR]
    gpmh ground-truth PRESET [--n N] [--seed S]
    gpmh bounds [--epsilon ...] [--sigma-n ...] [--n ...]
    gpmh validate-config CONFIG.json

Relative output directories are resolved against ``$GPMH_OUTPUT_ROOT`` (or
the working directory when it is unset). Ground-truth samples are cached
under ``<root>/ground_truth``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .design import DesignStrategy
from .diagnostics import (
    bound_conditional,
    bound_conditional_mc,
    bound_unconditional,
    bound_unconditional_mc,
    marginal_tv,
)
from .likelihoods import ToyTarget, UniformBox
from .presets import PRESETS, Problem, get_problem, toy_exact_samples, toy_logdensity_exact
from .sampler import (
    ChainTerminated,
    InitializationError,
    RunConfig,
    run_gp_mh,
    run_mh_blfi,
    run_reference_mh,
    sample_surrogate,
)

log = logging.getLogger("gpmh")

SCHEMA_VERSION = 1
OUTPUT_ENV = "GPMH_OUTPUT_ROOT"

_POS_INT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gpmh experiment",
    "type": "object",
    "required": ["problem", "seeds"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "problem": {
            "description": "preset name, or an object with a preset plus overrides, or a custom toy",
            "oneOf": [
                {"type": "string", "enum": list(PRESETS)},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "preset": {"type": "string", "enum": list(PRESETS)},
                        "density": {"type": "string", "enum": ["simple", "banana", "multimodal"]},
                        "noise_sd": {"type": "number", "exclusiveMinimum": 0},
                        "lower": _VEC,
                        "upper": _VEC,
                        "initial_point": _VEC,
                        "initial_proposal_sd": _VEC,
                        "t_init": _POS_INT,
                        "n_reps": {"type": "integer", "minimum": 3},
                        "n_bootstrap": {"type": "integer", "minimum": 0},
                    },
                    "oneOf": [{"required": ["preset"]}, {"required": ["density"]}],
                },
            ],
        },
        "method": {"enum": ["gp_mh", "mh_blfi", "reference_mcmc"], "default": "gp_mh"},
        "strategy": {"enum": ["epoe", "epoer", "naive"], "default": "epoe"},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5, "default": 0.2},
        "error_kind": {"enum": ["unconditional", "conditional"], "default": "unconditional"},
        "i_mh": {**_POS_INT, "description": "chain length; defaults to the preset's"},
        "t_max": {**_POS_INT, "description": "total evaluations for mh_blfi"},
        "s_mcmc": {**_POS_INT, "description": "surrogate MCMC length for mh_blfi", "default": 100000},
        "blfi_estimator": {"enum": ["mode", "median"], "default": "mode"},
        "max_total_evals": _POS_INT,
        "burn_in_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1, "default": 0.25},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1, "uniqueItems": True},
        "output_dir": {"type": "string", "default": "gpmh_out"},
        "snapshots": {
            "description": "iterations (gp_mh, reference_mcmc) or evaluation counts (mh_blfi) "
                           "at which TV is recorded; strictly increasing",
            "type": "array",
            "items": _POS_INT,
        },
        "tv_bins": {**_POS_INT, "default": 100},
        "ground_truth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": _POS_INT, "seed": {"type": "integer", "minimum": 0}},
        },
    },
}

METRICS_COLUMNS = {
    "snapshot": "schedule point (iteration, or evaluation count for mh_blfi)",
    "iteration": "MH iterations completed (emulated transitions for mh_blfi)",
    "eval_count": "log-likelihood evaluations after the initial design, cumulative",
    "tv_mean": "average over coordinates of the marginal TV distance to ground truth, in [0, 1]",
    "tv_<j>": "marginal TV of coordinate j, in [0, 1]",
}


class ConfigError(ValueError):
    pass


class StaleGroundTruth(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config handling


def validate_config(cfg):
    """Returns a list of error strings (empty when valid)."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in v.iter_errors(cfg)]
    if errs:
        return errs
    snaps = cfg.get("snapshots", [])
    if any(b <= a for a, b in zip(snaps, snaps[1:])):
        errs.append("snapshots: must be strictly increasing")
    prob = cfg["problem"]
    if isinstance(prob, dict) and "density" in prob:
        for k in ("lower", "upper", "initial_point", "initial_proposal_sd"):
            if k in prob and len(prob[k]) != 6:
                errs.append(f"problem/{k}: toy problems are 6-dimensional")
    if cfg.get("method") == "mh_blfi" and "t_max" not in cfg:
        errs.append("t_max: required for mh_blfi")
    return errs


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    errs = validate_config(cfg)
    if errs:
        raise ConfigError("\n".join(errs))
    return with_defaults(cfg)


def with_defaults(cfg):
    out = {"schema_version": SCHEMA_VERSION}
    for k, sch in CONFIG_SCHEMA["properties"].items():
        if "default" in sch:
            out[k] = sch["default"]
    out.update(cfg)
    return out


def build_problem(spec) -> Problem:
    if isinstance(spec, str):
        return get_problem(spec)
    spec = dict(spec)
    if "density" in spec:
        name = spec["density"]
        base = get_problem(name)
        noise = spec.get("noise_sd", base.target.noise_sd)
        tgt = ToyTarget(name, noise_sd=noise)
        prior = base.prior
        if "lower" in spec or "upper" in spec:
            prior = UniformBox(spec.get("lower", prior.lower), spec.get("upper", prior.upper))
        digest = hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:10]
        prob = Problem(name=f"custom_{name}_{digest}", target=tgt, prior=prior, initial_point=base.initial_point,
                       initial_proposal_cov=base.initial_proposal_cov, t_init=base.t_init, i_mh=base.i_mh,
                       estimate_noise=True, info={"density": name, "noise_sd": noise})
    else:
        kw = {k: spec[k] for k in ("n_reps", "n_bootstrap") if k in spec}
        prob = get_problem(spec["preset"], **kw)
    if "initial_point" in spec:
        prob.initial_point = np.asarray(spec["initial_point"], dtype=float)
    if "initial_proposal_sd" in spec:
        prob.initial_proposal_cov = np.diag(np.square(spec["initial_proposal_sd"]))
    if "t_init" in spec:
        prob.t_init = int(spec["t_init"])
    if len(prob.initial_point) != prob.dim or not prob.prior.contains(prob.initial_point):
        raise ConfigError("initial_point must lie inside the prior box")
    return prob


def resolve_output(path):
    p = Path(path)
    if p.is_absolute():
        return p
    root = os.environ.get(OUTPUT_ENV)
    return (Path(root) if root else Path.cwd()) / p


def output_root():
    root = os.environ.get(OUTPUT_ENV)
    return Path(root) if root else Path.cwd()


# ---------------------------------------------------------------------------
# ground truth


class _NoBootstrap:
    def __init__(self, target):
        self.target = target

    def evaluate(self, theta, rng):
        return self.target.evaluate_no_bootstrap(theta, rng)


def _problem_key(problem: Problem):
    return problem.name


def compute_ground_truth(problem: Problem, n=100_000, seed=0, cache_dir=None, burn_in_fraction=0.25):
    """Ground-truth posterior draws, cached by (preset, fixture hash, seed).

    Toys are sampled exactly; simulator problems use SL-MCMC (no bootstrap)
    with the preset's start and proposal, first ``burn_in_fraction`` dropped.
    """
    cache_dir = Path(cache_dir) if cache_dir is not None else output_root() / "ground_truth"
    key = f"{_problem_key(problem)}_seed{seed}_n{n}"
    data_f, meta_f = cache_dir / f"{key}.csv", cache_dir / f"{key}.json"
    meta = {"problem": problem.name, "fixture_hash": problem.fixture_hash, "seed": seed, "n": n,
            "burn_in_fraction": burn_in_fraction, "info": problem.info}
    if data_f.exists() and meta_f.exists():
        old = json.loads(meta_f.read_text())
        if old.get("fixture_hash") != problem.fixture_hash:
            raise StaleGroundTruth(f"cached ground truth {data_f} was built from a different data fixture")
        return np.loadtxt(data_f, delimiter=",", skiprows=1, ndmin=2)
    if "density" in problem.info:
        S = toy_exact_samples(problem.info["density"], n, seed, problem.prior)
        meta["method"] = "exact"
    else:
        S = run_reference_mh(_NoBootstrap(problem.target), problem.prior, problem.initial_proposal_cov, n, seed,
                             problem.initial_point, sl=True)
        S = S[int(np.floor(burn_in_fraction * n)) :]
        meta["method"] = "sl_mcmc"
    cache_dir.mkdir(parents=True, exist_ok=True)
    _write_matrix(data_f, S, [f"theta_{j + 1}" for j in range(S.shape[1])])
    meta_f.write_text(json.dumps(meta, indent=2) + "\n")
    return S


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_matrix(path, M, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(M):
            w.writerow([_fmt(v) for v in row])


def _write_rows(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] if isinstance(r[h], str) else _fmt(r[h]) for h in header])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    return o


def _run_config(cfg, problem, seed):
    return RunConfig(
        epsilon=cfg["epsilon"],
        i_mh=cfg.get("i_mh", problem.i_mh),
        t_init=problem.t_init,
        initial_point=problem.initial_point,
        initial_proposal_cov=problem.initial_proposal_cov,
        max_total_evals=cfg.get("max_total_evals"),
        burn_in_fraction=cfg["burn_in_fraction"],
        strategy=DesignStrategy(cfg["strategy"]),
        error_kind=cfg["error_kind"],
        seed=seed,
        estimate_noise=problem.estimate_noise,
        t_max=cfg.get("t_max"),
        s_mcmc=cfg["s_mcmc"],
        blfi_estimator=cfg["blfi_estimator"],
    )


def _tv_row(snapshot, iteration, eval_count, samples, truth, bins):
    rep = marginal_tv(samples, truth, bins)
    row = {"snapshot": snapshot, "iteration": iteration, "eval_count": eval_count, "tv_mean": rep.mean_tv}
    for j, v in enumerate(rep.per_dimension_tv):
        row[f"tv_{j + 1}"] = v
    return row


def run_seed(cfg, seed, out_dir, truth):
    """Run one seed and write its directory. Returns a status dict."""
    problem = build_problem(cfg["problem"])
    rc = _run_config(cfg, problem, seed)
    sdir = Path(out_dir) / f"seed_{seed}"
    sdir.mkdir(parents=True, exist_ok=True)
    echo = {**cfg, "seed": seed, "problem_info": problem.info, "fixture_hash": problem.fixture_hash,
            "i_mh": rc.i_mh, "t_init": rc.t_init, "initial_point": problem.initial_point,
            "initial_proposal_cov": problem.initial_proposal_cov}
    (sdir / "config.json").write_text(json.dumps(_jsonable(echo), indent=2, sort_keys=True) + "\n")
    p = problem.dim
    method = cfg["method"]
    snaps = cfg.get("snapshots", [])
    bins = cfg["tv_bins"]
    burn = cfg["burn_in_fraction"]
    rows, status, message = [], "ok", ""
    result = None
    try:
        if method == "gp_mh":
            try:
                result = run_gp_mh(problem.target, problem.prior, rc)
            except ChainTerminated as exc:
                result, status, message = exc.result, "terminated", str(exc)
            samples = result.samples
            for s in snaps:
                if s <= samples.shape[0] and truth is not None:
                    rows.append(_tv_row(s, s, result.eval_counts[s - 1], samples[int(np.floor(burn * s)) : s], truth, bins))
        elif method == "reference_mcmc":
            if problem.is_simulator:
                samples = run_reference_mh(_NoBootstrap(problem.target), problem.prior, problem.initial_proposal_cov, rc.i_mh,
                                           seed, problem.initial_point, sl=True)
            else:
                samples = run_reference_mh(toy_logdensity_exact(problem), problem.prior,
                                           problem.initial_proposal_cov, rc.i_mh, seed, problem.initial_point)
            for s in snaps:
                if s <= samples.shape[0] and truth is not None:
                    rows.append(_tv_row(s, s, s, samples[int(np.floor(burn * s)) : s], truth, bins))
        else:
            def cb(t, state):
                if truth is None:
                    return
                draws = sample_surrogate(state["gp"], problem.prior, rc.s_mcmc, seed + 1_000_003,
                                         problem.initial_point, problem.initial_proposal_cov, rc.blfi_estimator)
                rows.append(_tv_row(t, state["n_transitions"], state["eval_count"], draws[int(np.floor(burn * len(draws))) :],
                                    truth, bins))
            try:
                result = run_mh_blfi(problem.target, problem.prior, rc, callback=cb, snapshots=snaps)
            except ChainTerminated as exc:
                result, status, message = exc.result, "terminated", str(exc)
            samples = result.surrogate_samples if result.surrogate_samples is not None else np.empty((0, p))
    except InitializationError as exc:
        status, message, samples = "failed", str(exc), np.empty((0, p))

    names = [f"theta_{j + 1}" for j in range(p)]
    if samples.size:
        _write_matrix(sdir / "samples.csv", samples, names)
    else:
        _write_rows(sdir / "samples.csv", [], names)
    ev_rows = []
    if result is not None:
        for e in result.evaluations:
            r = {n: v for n, v in zip(names, e.theta)}
            r.update(y=e.y, noise_sd=e.noise_sd)
            ev_rows.append(r)
    _write_rows(sdir / "evaluations.csv", ev_rows, names + ["y", "noise_sd"])
    header = ["snapshot", "iteration", "eval_count", "tv_mean"] + [f"tv_{j + 1}" for j in range(p)]
    _write_rows(sdir / "metrics.csv", rows, header)
    diag = {"status": status, "message": message, "method": method, "seed": seed}
    if result is not None:
        diag.update(result.diagnostics)
        diag["hyper_history"] = result.hyper_history
    if truth is not None and samples.shape[0] > 0:
        final = samples[int(np.floor(burn * samples.shape[0])) :] if method != "mh_blfi" else samples
        diag["final_tv"] = marginal_tv(final, truth, bins).to_dict()
    (sdir / "diagnostics.json").write_text(json.dumps(_jsonable(diag), indent=2, sort_keys=True) + "\n")
    return {"seed": seed, "status": status, "message": message, "rows": rows}


def _summary(results, snaps):
    out = []
    for s in snaps:
        rs = [r for res in results for r in res["rows"] if r["snapshot"] == s]
        if not rs:
            continue
        tv = np.array([r["tv_mean"] for r in rs])
        ec = np.array([r["eval_count"] for r in rs], dtype=float)
        out.append({
            "snapshot": s, "n_seeds": len(rs),
            "eval_count_median": float(np.median(ec)),
            "eval_count_q125": float(np.quantile(ec, 0.125)),
            "eval_count_q875": float(np.quantile(ec, 0.875)),
            "tv_median": float(np.median(tv)),
            "tv_q125": float(np.quantile(tv, 0.125)),
            "tv_q875": float(np.quantile(tv, 0.875)),
        })
    return out


def _run_seed_job(args):
    return run_seed(*args)


def run_experiment(cfg, out_dir, jobs=1):
    problem = build_problem(cfg["problem"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = None
    if cfg.get("snapshots") or "ground_truth" in cfg:
        gt = cfg.get("ground_truth", {})
        truth = compute_ground_truth(problem, gt.get("n", 100_000), gt.get("seed", 0))
    jobs_args = [(cfg, s, out_dir, truth) for s in cfg["seeds"]]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_seed_job, jobs_args))
    else:
        results = [run_seed(*a) for a in jobs_args]
    _write_rows(out_dir / "runs.csv", [{k: r[k] for k in ("seed", "status", "message")} for r in results],
                ["seed", "status", "message"])
    summ = _summary(results, cfg.get("snapshots", []))
    _write_rows(out_dir / "summary.csv", summ,
                ["snapshot", "n_seeds", "eval_count_median", "eval_count_q125", "eval_count_q875",
                 "tv_median", "tv_q125", "tv_q875"])
    return results


# ---------------------------------------------------------------------------
# bounds table


def bounds_table(epsilons, sigma_ns, ns, sigma_s=1e3, p=5, s2=None, n_mc=10_000, seed=0):
    s2 = 2.4**2 / p if s2 is None else s2
    rng = np.random.default_rng(seed)
    rows = []
    for sn in sigma_ns:
        for n in ns:
            ub = bound_unconditional(sigma_s, sn, n)
            for eps in epsilons:
                rows.append({
                    "sigma_n_bar": sn, "n": n, "epsilon": eps,
                    "bound_conditional": bound_conditional(eps, sigma_s, sn, n),
                    "bound_unconditional": ub,
                    "avg_bound_conditional": bound_conditional_mc(eps, sigma_s, sn, n, p, s2, n_mc, rng),
                    "avg_bound_unconditional": bound_unconditional_mc(eps, sigma_s, sn, n, p, s2, n_mc, rng),
                })
    return rows


# ---------------------------------------------------------------------------
# entry point


def _parser():
    ap = argparse.ArgumentParser(prog="gpmh", description=__doc__.strip().splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--output", help="override output_dir")
    g = sub.add_parser("ground-truth", help="compute or reuse cached ground-truth samples")
    g.add_argument("preset", choices=PRESETS)
    g.add_argument("--n", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cache-dir")
    b = sub.add_parser("bounds", help="tables of the evaluation-count bounds")
    b.add_argument("--epsilon", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.2])
    b.add_argument("--sigma-n", type=float, nargs="+", default=[1.0])
    b.add_argument("--n", type=int, nargs="+", default=[2, 4, 8, 16, 32, 64, 128, 256, 512])
    b.add_argument("--sigma-s", type=float, default=1e3)
    b.add_argument("--p", type=int, default=5)
    b.add_argument("--mc", type=int, default=10_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="CSV path (stdout if omitted)")
    v = sub.add_parser("validate-config", help="check a config against the schema")
    v.add_argument("config")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.cmd == "validate-config":
            load_config(args.config)
            print("ok")
            return 0
        if args.cmd == "run":
            cfg = load_config(args.config)
            out = resolve_output(args.output or cfg["output_dir"])
            res = run_experiment(cfg, out, jobs=args.jobs)
            for r in res:
                print(f"seed {r['seed']}: {r['status']}{(' - ' + r['message']) if r['message'] else ''}")
            print(f"results in {out}")
            return 0
        if args.cmd == "ground-truth":
            prob = get_problem(args.preset)
            S = compute_ground_truth(prob, args.n, args.seed, args.cache_dir)
            print(f"{S.shape[0]} draws; mean {np.array2string(S.mean(0), precision=4)}")
            return 0
        if args.cmd == "bounds":
            rows = bounds_table(args.epsilon, args.sigma_n, args.n, args.sigma_s, args.p, n_mc=args.mc, seed=args.seed)
            header = list(rows[0])
            if args.out:
                _write_rows(args.out, rows, header)
            else:
                w = csv.writer(sys.stdout)
                w.writerow(header)
                for r in rows:
                    w.writerow([_fmt(r[h]) for h in header])
            return 0
    except ConfigError as exc:
        print(f"invalid config:\n{exc}", file=sys.stderr)
        return 2
    except StaleGroundTruth as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 1


if __name__ == "__main__":
    sys.exit(main())
