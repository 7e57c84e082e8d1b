"""Command-line interface.

Subcommands: generate | fit | predict | evaluate | select | cv.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.

Settings resolve as defaults < config file < command-line flags, and every
run of ``fit`` writes a manifest echoing the fully resolved configuration;
``fit --replay manifest.json`` reproduces the draw files byte-for-byte.
The ANOVATREES_WORKERS environment variable sets the worker-pool size used
for cross-validation folds and multiple chains.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__, posterior, synthetic
from ._kernels import BACKEND
from .dataset import DataMatrix, kfold_split, load_csv
from .errors import (AnovaTreesError, ConfigError, DataError, NumericError,
                     UsageError)
from .posterior import (PosteriorDraws, load_draws, merge_draws, save_draws)
from .priors import Hyperparams
from .sampler import ChainConfig, run_chain

MANIFEST_FORMAT = "anovatrees-manifest-v1"

# config-file keys, their converters, and where they land
_FLOAT = float
_INT = int


def _float_or_none(text):
    return None if text.lower() in ("none", "off", "disabled") else float(text)


HYPER_KEYS = {
    "alpha_split": _FLOAT,
    "gamma_split": _FLOAT,
    "sigma_beta2": _FLOAT,
    "v": _FLOAT,
    "lambda": _float_or_none,
    "q_lambda": _FLOAT,
    "C_star": _FLOAT,
    "T_max": _INT,
    "xi": _float_or_none,
}
CHAIN_KEYS = {
    "n_iter": _INT,
    "burn_in": _INT,
    "thin": _INT,
    "seed": _INT,
    "chains": _INT,
    "audit_every": _INT,
}
ALL_KEYS = {**HYPER_KEYS, **CHAIN_KEYS}


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage through our exit-code mapping."""

    def error(self, message):
        raise UsageError(message)


def parse_config_file(path) -> dict:
    """Read a flat ``key = value`` file (# starts a comment). Unknown keys
    and unparsable values are all collected into one error."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    values = {}
    problems = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{path}:{lineno}: expected 'key = value'")
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in ALL_KEYS:
            problems.append(f"{path}:{lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = ALL_KEYS[key](val)
        except ValueError:
            problems.append(f"{path}:{lineno}: bad value for {key}: {val!r}")
    if problems:
        raise ConfigError(problems)
    return values


def _resolved_settings(args) -> dict:
    """defaults < config file < CLI flags, as one flat dict."""
    settings = {
        "alpha_split": 0.95, "gamma_split": 2.0, "sigma_beta2": 0.1,
        "v": 3.0, "lambda": None, "q_lambda": 0.95, "C_star": 1e-2,
        "T_max": 200, "xi": None,
        "n_iter": 2000, "burn_in": 1000, "thin": 1, "seed": 0,
        "chains": 1, "audit_every": 100,
    }
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for key in ALL_KEYS:
        flag = key.replace("-", "_")
        val = getattr(args, flag, None)
        if val is not None:
            settings[key] = val
    return settings


def _split_settings(settings, progress=False):
    h = Hyperparams(
        alpha_split=settings["alpha_split"], gamma_split=settings["gamma_split"],
        sigma_beta2=settings["sigma_beta2"], v=settings["v"],
        lam=settings["lambda"], q_lambda=settings["q_lambda"],
        C_star=settings["C_star"], T_max=settings["T_max"], xi=settings["xi"],
    )
    cfg = ChainConfig(
        n_iter=settings["n_iter"], burn_in=settings["burn_in"],
        thin=settings["thin"], seed=settings["seed"],
        truncation_enabled=settings["xi"] is not None,
        audit_every=settings["audit_every"],
        progress_every=max(settings["n_iter"] // 10, 1) if progress else 0,
    )
    h.validate()
    cfg.validate()
    return h, cfg


def _worker_count() -> int:
    raw = os.environ.get("ANOVATREES_WORKERS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise UsageError(f"ANOVATREES_WORKERS must be an integer, got {raw!r}")
    return max(count, 1)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _add_settings_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value settings file")
    group = p.add_argument_group("settings overrides")
    for key, conv in ALL_KEYS.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=key,
                           type=conv, default=None, metavar="V")


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="CSV file with header row")
    p.add_argument("--response", default="y", help="response column name")
    p.add_argument("--categorical", nargs="*", default=[],
                   help="columns to one-hot encode even if numeric")


# ---------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    spec = synthetic.SyntheticSpec(n=args.n, p=args.p, snr=args.snr,
                                   seed=args.seed)
    sd = synthetic.generate(spec)
    sidecar = args.sidecar or args.out + ".meta.json"
    synthetic.write_csv(sd, args.out, sidecar)
    print(f"wrote {args.out} (n={spec.n}, p={spec.p}, sigma_eps={sd.sigma_eps:.6g}) "
          f"and {sidecar}")
    return 0


# --------------------------------------------------------------------- fit

def _fit_chain_task(payload):
    data, h, cfg, out_path, draw_log = payload
    draws = run_chain(data, h, cfg, draw_log_path=draw_log)
    save_draws(draws, out_path)
    return out_path, draws.meta


def _run_fit(data_path, response, categorical, settings, out_dir,
             progress, draw_log=None):
    data = load_csv(data_path, response, categorical=categorical)
    h, cfg = _split_settings(settings, progress=progress)
    chains = settings["chains"]
    os.makedirs(out_dir, exist_ok=True)

    tasks = []
    for i in range(chains):
        name = "draws.json" if chains == 1 else f"draws.chain{i}.json"
        cfg_i = replace(cfg, seed=cfg.seed + i)
        log_i = None
        if draw_log:
            log_i = draw_log if chains == 1 else f"{draw_log}.chain{i}"
        tasks.append((data, h, cfg_i, os.path.join(out_dir, name), log_i))

    workers = _worker_count()
    if workers > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, chains)) as pool:
            results = list(pool.map(_fit_chain_task, tasks))
    else:
        results = [_fit_chain_task(t) for t in tasks]

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "kernel_backend": BACKEND,
        "command": "fit",
        "data": {
            "path": os.path.abspath(data_path),
            "sha256": _sha256(data_path),
            "response": response,
            "categorical": list(categorical),
        },
        "config": settings,
        "artifacts": {"draws": [os.path.basename(p) for p, _ in results]},
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")

    for path, meta in results:
        rates = ", ".join(f"{k}={v:.3f}" for k, v in meta["acceptance_rates"].items())
        print(f"{path}: retained={meta['retained']} "
              f"skipped={meta['skipped_truncation']} acceptance({rates})")
    print(f"manifest: {manifest_path}")
    return manifest_path


def cmd_fit(args) -> int:
    if args.replay:
        try:
            with open(args.replay, encoding="utf-8") as fh:
                manifest = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read manifest {args.replay}: {exc}") from exc
        if manifest.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{args.replay} is not a run manifest")
        _run_fit(
            data_path=manifest["data"]["path"],
            response=manifest["data"]["response"],
            categorical=manifest["data"]["categorical"],
            settings=manifest["config"],
            out_dir=args.out_dir,
            progress=args.progress,
            draw_log=args.draw_log,
        )
        return 0
    if not args.data:
        raise UsageError("--data is required (or --replay)")
    settings = _resolved_settings(args)
    _run_fit(args.data, args.response, args.categorical, settings,
             args.out_dir, args.progress, args.draw_log)
    return 0


# ----------------------------------------------------- predict / evaluate

def _load_merged(paths) -> PosteriorDraws:
    return merge_draws([load_draws(p) for p in paths])


def _load_query(args, dr: PosteriorDraws) -> DataMatrix:
    data = load_csv(args.data, args.response, categorical=args.categorical)
    if data.p != dr.p:
        raise DataError(
            f"draws were fit on p={dr.p} covariates, data has p={data.p}"
        )
    return data


def cmd_predict(args) -> int:
    dr = _load_merged(args.draws)
    data = _load_query(args, dr)
    pred = posterior.predict_mean(dr, data.x)
    with open(args.out, "w", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "prediction"])
        for i, v in enumerate(pred):
            writer.writerow([i, repr(float(v))])
    print(f"wrote {args.out} ({len(pred)} predictions)")
    return 0


def cmd_evaluate(args) -> int:
    dr = _load_merged(args.draws)
    data = _load_query(args, dr)
    pred = posterior.predict_mean(dr, data.x)
    rmse_val = posterior.rmse(pred, data.y)
    rng = np.random.default_rng(args.crps_seed)
    # one tree pass for the whole matrix, then per-row predictive samples
    # cycling the draws (same scheme as posterior.predictive_samples)
    f_matrix = posterior.predictive_matrix(dr, data.x)
    sigma = np.sqrt([d.sigma2 for d in dr.draws])
    idx = np.arange(args.crps_samples) % len(dr.draws)
    crps_rows = np.empty(data.n)
    bands = np.empty((data.n, 3))
    for i in range(data.n):
        samples = dr.std.inverse_y(
            f_matrix[idx, i] + sigma[idx] * rng.standard_normal(idx.size))
        crps_rows[i] = posterior.crps(samples, float(data.y[i]))
        bands[i] = np.quantile(samples, [0.05, 0.5, 0.95])
    rows_path = args.out_prefix + ".predictions.csv"
    with open(rows_path, "w", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "prediction", "actual", "crps",
                         "q05", "q50", "q95"])
        for i in range(data.n):
            writer.writerow([i, repr(float(pred[i])), repr(float(data.y[i])),
                             repr(float(crps_rows[i])),
                             repr(float(bands[i, 0])), repr(float(bands[i, 1])),
                             repr(float(bands[i, 2]))])
    summary = {
        "n": data.n,
        "rmse": rmse_val,
        "mean_crps": float(crps_rows.mean()),
        "crps_samples": args.crps_samples,
        "draws_meta": dr.meta,
    }
    summary_path = args.out_prefix + ".summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"rmse={rmse_val:.6g} mean_crps={summary['mean_crps']:.6g} "
          f"({rows_path}, {summary_path})")
    return 0


# ------------------------------------------------------------------ select

def _component_label(S, names) -> str:
    return "*".join(names[j] for j in S)


def cmd_select(args) -> int:
    dr = _load_merged(args.draws)
    data = _load_query(args, dr)
    scores = posterior.importance_scores(dr, data, tau=args.tau)
    kept = set(posterior.select_components(dr, data, tau=args.tau,
                                           delta=args.delta))
    with open(args.out, "w", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "columns", "mean_norm", "score",
                         "exceedance", "kept"])
        for cs in scores:
            writer.writerow([
                _component_label(cs.S, data.column_names),
                "+".join(str(j) for j in cs.S),
                repr(cs.mean_norm), repr(cs.score), repr(cs.exceedance),
                int(cs.S in kept),
            ])
    kept_labels = [_component_label(S, data.column_names) for S in sorted(kept)]
    print(f"kept {len(kept)} components (tau={args.tau}, delta={args.delta}): "
          + (", ".join(kept_labels) if kept_labels else "none"))
    print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------------- cv

def parse_grid_file(path) -> list[dict]:
    """Grid file: hyperparameter keys with comma-separated candidate lists.
    Returns the cartesian product in file order (first key varies slowest),
    which also defines the tie-breaking order."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read grid {path}: {exc}") from exc
    keys, candidates, problems = [], [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, vals = line.partition("=")
        key = key.strip()
        if not eq or key not in HYPER_KEYS:
            problems.append(f"{path}:{lineno}: expected '<hyperparam> = v1,v2,...'"
                            f" with known key, got {raw.strip()!r}")
            continue
        try:
            parsed = [HYPER_KEYS[key](v.strip()) for v in vals.split(",")]
        except ValueError:
            problems.append(f"{path}:{lineno}: bad values for {key}")
            continue
        keys.append(key)
        candidates.append(parsed)
    if problems:
        raise ConfigError(problems)
    if not keys:
        raise DataError(f"{path}: empty grid")
    return [dict(zip(keys, combo)) for combo in itertools.product(*candidates)]


def _cv_task(payload):
    data, settings, train_idx, val_idx, seed = payload
    train = DataMatrix(x=data.x[train_idx], y=data.y[train_idx],
                       column_names=data.column_names)
    h, cfg = _split_settings({**settings, "seed": seed})
    draws = run_chain(train, h, cfg)
    pred = posterior.predict_mean(draws, data.x[val_idx])
    return posterior.rmse(pred, data.y[val_idx])


def cmd_cv(args) -> int:
    data = load_csv(args.data, args.response, categorical=args.categorical)
    base = _resolved_settings(args)
    grid = parse_grid_file(args.grid)
    folds = kfold_split(data.n, args.k, base["seed"])

    tasks = []
    for gi, point in enumerate(grid):
        for fi, (train_idx, val_idx) in enumerate(folds):
            settings = {**base, **point}
            tasks.append((data, settings, train_idx, val_idx,
                          base["seed"] + fi))
    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_cv_task, tasks))
    else:
        flat = [_cv_task(t) for t in tasks]

    table = []
    best_idx = 0
    for gi, point in enumerate(grid):
        fold_rmse = flat[gi * len(folds):(gi + 1) * len(folds)]
        mean = float(np.mean(fold_rmse))
        table.append({"point": point, "mean_rmse": mean,
                      "fold_rmse": fold_rmse})
        if mean < table[best_idx]["mean_rmse"]:
            best_idx = gi
    report = {"k": args.k, "seed": base["seed"], "grid": table,
              "best": table[best_idx]["point"],
              "best_mean_rmse": table[best_idx]["mean_rmse"]}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"best: {report['best']} (mean rmse {report['best_mean_rmse']:.6g})")
    print(f"wrote {args.out}")
    return 0


# -------------------------------------------------------------- dispatcher

def build_parser() -> _Parser:
    parser = _Parser(prog="anovatrees", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic Friedman dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--snr", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="run MCMC and write draws + manifest")
    p.add_argument("--data", default=None, help="CSV file with header row")
    p.add_argument("--response", default="y")
    p.add_argument("--categorical", nargs="*", default=[])
    p.add_argument("--out-dir", default=".")
    p.add_argument("--draw-log", default=None,
                   help="stream one JSON record per retained draw here")
    p.add_argument("--replay", default=None,
                   help="re-run from a manifest, reproducing outputs")
    p.add_argument("--progress", action="store_true",
                   help="progress lines on stderr")
    _add_settings_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior-mean predictions")
    p.add_argument("--draws", nargs="+", required=True)
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RMSE and CRPS on labeled data")
    p.add_argument("--draws", nargs="+", required=True)
    _add_data_flags(p)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--crps-samples", type=int, default=200)
    p.add_argument("--crps-seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", help="post-hoc component selection")
    p.add_argument("--draws", nargs="+", required=True)
    _add_data_flags(p)
    p.add_argument("--tau", type=float, default=0.05,
                   help="norm threshold on the standardized scale")
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cv", help="k-fold cross-validation over a grid")
    _add_data_flags(p)
    p.add_argument("--grid", required=True, help="grid file of candidates")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_settings_flags(p)
    p.set_defaults(func=cmd_cv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except AnovaTreesError as exc:  # other package errors behave as usage
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
