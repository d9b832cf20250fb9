"""Command-line pipeline: ``generate`` -> ``fit`` -> ``posterior`` -> ``report``.

Each verb reads a JSON experiment config; flags override individual fields.
Outputs live under ``<out>/seed_<s>/``:

    dataset.csv, dataset.split.json    inputs, HF and LF outputs, split
    fit_<M>.json                       trained surrogate / flow checkpoint
    grid_<M>.npz | samples_<M>.csv     plot-ready posterior
    manifest_<M>.json                  config hash, timings, metrics
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigurationError, MfPosteriorError, NumericalError
from .experiments import (PROBLEMS, FittedMethod, covariance_summary, fit_method,
                          generate_dataset, make_problem, rationale_grid,
                          rationale_reference_grid, run_dream, run_grid)
from .data import Dataset
from .inference import PosteriorGrid, hellinger, knn_kl_divergence
from .nn import read_json, write_json

log = logging.getLogger("mfposterior")

OUT_ENV = "MFPOSTERIOR_OUT"

DEFAULTS = {
    "problem": "analytical",
    "methods": ["A", "B", "C", "D", "E", "F"],
    "n": 100,
    "n_train": None,
    "sampling_scheme": "uniform",
    "seeds": [0],
    "prior": "default",
    "sigma_log": None,
    "obs_seed": 0,
    "epochs": 10000,
    "flow_epochs": None,
    "grid_resolution": 100,
    "chains": 5,
    "iterations": 20000,
    "max_iterations": None,
    "gr_threshold": 1.01,
    "kl_samples": 10000,
    "kl_k": 5,
    "output": None,
}

RATIONALE_SIGMAS = (0.0, 0.125, 0.25, 0.5)


# ---------------------------------------------------------------------------
# config

def load_config(path: Optional[str], args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    overrides = {
        "methods": [m.strip() for m in args.method.split(",")] if getattr(args, "method", None) else None,
        "seeds": [int(s) for s in str(args.seed).split(",")] if getattr(args, "seed", None) is not None else None,
        "n": getattr(args, "n", None),
        "grid_resolution": getattr(args, "grid_res", None),
        "chains": getattr(args, "chains", None),
        "iterations": getattr(args, "iters", None),
        "gr_threshold": getattr(args, "gr_threshold", None),
        "output": getattr(args, "out", None),
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg["output"] is None:
        cfg["output"] = str(Path(os.environ.get(OUT_ENV, "runs")) / cfg["problem"])
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["problem"] not in PROBLEMS + ("rationale",):
        raise ConfigurationError(f"unknown problem {cfg['problem']!r}")
    bad = [m for m in cfg["methods"] if m not in "ABCDEF" or len(m) != 1]
    if bad:
        raise ConfigurationError(f"unknown methods {bad}")
    if cfg["n"] < 4:
        raise ConfigurationError("dataset size n must be at least 4")
    if cfg["sampling_scheme"] not in ("uniform", "lhs"):
        raise ConfigurationError("sampling_scheme must be 'uniform' or 'lhs'")
    if cfg["grid_resolution"] < 2:
        raise ConfigurationError("grid resolution must be at least 2")
    if cfg["chains"] < 3:
        raise ConfigurationError("DREAM needs at least 3 chains")


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _seed_dir(cfg: dict, seed: int) -> Path:
    return Path(cfg["output"]) / f"seed_{seed}"


def _problem(cfg: dict):
    return make_problem(cfg["problem"], cfg["prior"], cfg["sigma_log"], cfg["obs_seed"])


def _manifest_path(cfg, seed, method) -> Path:
    return _seed_dir(cfg, seed) / f"manifest_{method}.json"


def _load_manifest(cfg, seed, method) -> dict:
    p = _manifest_path(cfg, seed, method)
    if p.exists():
        m = read_json(p)
        if m.get("config_hash") == config_hash(cfg):
            return m
    return {"config_hash": config_hash(cfg), "version": __version__, "problem": cfg["problem"],
            "prior": cfg["prior"], "sigma_log": cfg["sigma_log"], "method": method, "seed": seed,
            "n": cfg["n"], "sampling_scheme": cfg["sampling_scheme"], "timings": {}, "metrics": {}}


# ---------------------------------------------------------------------------
# verbs

def cmd_generate(cfg: dict) -> list[Path]:
    if cfg["problem"] == "rationale":
        log.info("the rationale illustration needs no dataset")
        return []
    problem = _problem(cfg)
    paths = []
    for seed in cfg["seeds"]:
        data = generate_dataset(problem, cfg["n"], seed, cfg["sampling_scheme"], cfg["n_train"])
        path = _seed_dir(cfg, seed) / "dataset.csv"
        data.save(path)
        log.info("seed %d: wrote %s (%d train / %d test)", seed, path, len(data.train_idx), len(data.test_idx))
        paths.append(path)
    return paths


def cmd_fit(cfg: dict) -> list[Path]:
    if cfg["problem"] == "rationale":
        log.info("the rationale illustration trains its flows during 'posterior'")
        return []
    problem = _problem(cfg)
    written = []
    for seed in cfg["seeds"]:
        dpath = _seed_dir(cfg, seed) / "dataset.csv"
        if not dpath.exists():
            raise ConfigurationError(f"{dpath} missing; run 'generate' first")
        data = Dataset.load(dpath)
        for method in cfg["methods"]:
            t0 = time.perf_counter()
            try:
                fitted = fit_method(problem, data, method, seed, cfg["epochs"], cfg["flow_epochs"])
            except NumericalError as exc:
                raise type(exc)(f"{cfg['problem']} method {method} seed {seed}: {exc}") from exc
            elapsed = time.perf_counter() - t0
            path = _seed_dir(cfg, seed) / f"fit_{method}.json"
            write_json(path, fitted.to_dict())
            man = _load_manifest(cfg, seed, method)
            man["timings"]["fit"] = elapsed
            man["metrics"].update({k: v for k, v in fitted.info.items()
                                   if k in ("train_mse", "test_mse", "alpha",
                                            "flow_train_loglik", "flow_test_loglik")})
            write_json(_manifest_path(cfg, seed, method), man)
            log.info("seed %d method %s: fit in %.1fs", seed, method, elapsed)
            written.append(path)
    return written


def _load_fitted(cfg, seed, method) -> FittedMethod:
    if method == "A":
        return FittedMethod("A")
    path = _seed_dir(cfg, seed) / f"fit_{method}.json"
    if not path.exists():
        raise ConfigurationError(f"{path} missing; run 'fit' first")
    return FittedMethod.from_dict(read_json(path))


def cmd_posterior(cfg: dict) -> list[dict]:
    if cfg["problem"] == "rationale":
        return _rationale_posterior(cfg)
    problem = _problem(cfg)
    use_grid = problem.dim <= 2
    manifests = []
    for seed in cfg["seeds"]:
        sdir = _seed_dir(cfg, seed)
        ref = None
        methods = cfg["methods"]
        # the Method-A reference is computed first whenever a comparison is needed
        order = ["A"] + [m for m in methods if m != "A"]
        for method in order:
            fitted = _load_fitted(cfg, seed, method)
            problem.hf.calls = 0
            t0 = time.perf_counter()
            metrics = {}
            if use_grid:
                grid = run_grid(problem, fitted, cfg["grid_resolution"])
                elapsed = time.perf_counter() - t0
                if method == "A":
                    ref = grid
                metrics["hellinger"] = hellinger(grid, ref)
                metrics.update(covariance_summary(problem, grid.covariance()))
                metrics["grid_integral"] = grid.integral()
                if method in methods:
                    grid.save(sdir / f"grid_{method}.npz")
            else:
                ens, gr = run_dream(problem, fitted, cfg["chains"], cfg["iterations"], seed=seed,
                                    gr_threshold=cfg["gr_threshold"],
                                    max_iter=cfg["max_iterations"])
                elapsed = time.perf_counter() - t0
                samples = ens.samples(cfg["kl_samples"])
                if method == "A":
                    ref = samples
                metrics["kl"] = knn_kl_divergence(samples, ref, k=cfg["kl_k"]) if method != "A" else 0.0
                metrics["gelman_rubin"] = gr.tolist()
                metrics["acceptance_rate"] = ens.acceptance_rate
                metrics["iterations"] = ens.iteration
                metrics.update(covariance_summary(problem, np.cov(samples.T)))
                if method in methods:
                    ens.write_csv(sdir / f"samples_{method}.csv")
            if method not in methods:
                continue
            man = _load_manifest(cfg, seed, method)
            man["timings"]["posterior"] = elapsed
            man["metrics"].update(metrics)
            man["metrics"]["hf_calls_posterior"] = problem.hf.calls
            write_json(_manifest_path(cfg, seed, method), man)
            manifests.append(man)
            log.info("seed %d method %s: %s", seed, method,
                     {k: v for k, v in metrics.items() if k in ("hellinger", "kl", "trace")})
    return manifests


def _rationale_posterior(cfg: dict) -> list[dict]:
    manifests = []
    epochs = cfg["flow_epochs"] or 5000
    for seed in cfg["seeds"]:
        sdir = _seed_dir(cfg, seed)
        sdir.mkdir(parents=True, exist_ok=True)
        for s_noise in RATIONALE_SIGMAS:
            ref = rationale_reference_grid(s_noise, cfg["grid_resolution"]) if s_noise > 0 else None
            for s_model in RATIONALE_SIGMAS:
                t0 = time.perf_counter()
                grid, flow = rationale_grid(s_model, s_noise, cfg["grid_resolution"], seed, epochs=epochs)
                tag = f"model{s_model:g}_noise{s_noise:g}"
                grid.save(sdir / f"grid_F_{tag}.npz")
                var = float(np.var(flow.sample(100000, seed), ddof=1))
                man = {"config_hash": config_hash(cfg), "version": __version__,
                       "problem": "rationale", "method": "F", "seed": seed,
                       "sigma_model": s_model, "sigma_noise": s_noise,
                       "timings": {"posterior": time.perf_counter() - t0},
                       "metrics": {"flow_variance": var,
                                   "target_variance": s_model**2 + s_noise**2,
                                   "trace": float(np.trace(grid.covariance()))}}
                if s_model == 0.0 and ref is not None:
                    man["metrics"]["hellinger_vs_A"] = hellinger(grid, ref)
                write_json(sdir / f"manifest_F_{tag}.json", man)
                manifests.append(man)
    return manifests


# ---------------------------------------------------------------------------
# report

def _fmt(v) -> str:
    return "" if v is None else f"{v:.6g}"


def aggregate(manifests: list[dict]) -> tuple[list[str], list[list[str]]]:
    """Mean and std (ddof=1) per method; std is blank for a single run."""
    if not manifests:
        raise ConfigurationError("no manifests to report")
    problems = {m["problem"] for m in manifests}
    if len(problems) > 1:
        raise ConfigurationError(f"cannot aggregate mixed benchmarks: {sorted(problems)}")
    problem = problems.pop()
    metric_keys = ["hellinger", "kl", "trace"]
    if problem == "borehole":
        metric_keys.append("rescaled_trace")
    cols = ["method", "runs"]
    for k in metric_keys:
        cols += [f"{k}_mean", f"{k}_std"]
    if problem == "circuit":
        cols += ["diag_mean"]
    cols += ["fit_s_mean", "fit_s_std", "posterior_s_mean", "posterior_s_std"]

    rows = []
    for method in sorted({m["method"] for m in manifests}):
        group = [m for m in manifests if m["method"] == method]
        row = [method, str(len(group))]

        def stats(vals):
            vals = [v for v in vals if v is not None]
            if not vals:
                return "", ""
            mean = float(np.mean(vals))
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
            return _fmt(mean), _fmt(std)

        for k in metric_keys:
            row += stats([g["metrics"].get(k) for g in group])
        if problem == "circuit":
            diags = [g["metrics"]["diag"] for g in group if "diag" in g["metrics"]]
            row.append(" ".join(_fmt(v) for v in np.mean(diags, axis=0)) if diags else "")
        row += stats([g["timings"].get("fit") for g in group])
        row += stats([g["timings"].get("posterior") for g in group])
        rows.append(row)
    return cols, rows


def cmd_report(paths: list[str], out: Optional[str] = None) -> str:
    files = []
    for p in paths:
        p = Path(p)
        files += sorted(p.rglob("manifest_*.json")) if p.is_dir() else [p]
    if not files:
        raise ConfigurationError("no manifests found")
    cols, rows = aggregate([read_json(f) for f in files])
    text = "\n".join("\t".join(r) for r in [cols] + rows) + "\n"
    if out:
        Path(out).write_text(text)
    return text


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfposterior", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("generate", "fit", "posterior"):
        s = sub.add_parser(verb)
        s.add_argument("config", nargs="?", help="JSON experiment config")
        s.add_argument("--method", help="comma-separated method tags, e.g. A,B,F")
        s.add_argument("--seed", help="seed or comma-separated seeds")
        s.add_argument("--n", type=int, help="dataset size")
        s.add_argument("--grid-res", type=int, dest="grid_res")
        s.add_argument("--chains", type=int)
        s.add_argument("--iters", type=int)
        s.add_argument("--gr-threshold", type=float, dest="gr_threshold")
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<problem>)")
    r = sub.add_parser("report")
    r.add_argument("manifests", nargs="+", help="manifest files or run directories")
    r.add_argument("--out", help="write the table to this file")
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "report":
            sys.stdout.write(cmd_report(args.manifests, args.out))
            return 0
        cfg = load_config(args.config, args)
        {"generate": cmd_generate, "fit": cmd_fit, "posterior": cmd_posterior}[args.verb](cfg)
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except MfPosteriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
