"""Command-line experiments: ``generate``, ``train``, ``evaluate`` and ``sweep``.

Every command writes into ``--out``:

    manifest.json     flags, seed, input hashes and output paths (no timing)
    timing.json       wall-clock seconds, kept apart so manifests are reproducible
    model/model.json  fitted model (train)
    report.json       training curves, connections and zero mask (train)
    metrics.json      validation and test metrics (train, evaluate)
    curves.csv        stage,epoch,train_objective,val_objective (train)
    connections.csv   latent x input connection matrix (train)
    latent.csv        latent codes of the evaluated rows (train, evaluate)
    reconstruction.csv  reconstructed rows (evaluate)
    results.csv       one row per run (evaluate, sweep)

A ``--config`` JSON file may set any flag (dashes or underscores); flags given
on the command line take precedence.  On failure the process exits with a
nonzero code and prints a JSON error object to stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, data, evaluation, trainer
from .errors import ConfigError, PathLassoError, ShapeError

METHODS = ("pathlasso", "lasso", "plain", "pca")
DEFAULT_LAMBDA_GRID = (0.01, 0.03, 0.05, 0.1, 0.3)

TRAIN_DEFAULTS = {
    "method": "pathlasso",
    "latent_dim": 2,
    "hidden": "50",
    "lambda": 0.0,
    "has_labels": False,
    "skip_header": False,
    "standardize": True,
    "test_frac": 0.2,
    "val_frac": 0.1,
    "split_seed": 0,
    "seed": 0,
    "gamma": 2.0,
    "exclusive_weight": None,
    "substitution": True,
    "adam_lr": 1e-3,
    "prox_lr": 1e-2,
    "batch_size": None,
    "prox_batch_size": None,
    "max_epochs": 2000,
    "prox_max_epochs": 2000,
    "patience": 20,
    "min_delta": 1e-5,
    "block_splits": None,
    "boolean_threshold": False,
    "threshold": None,
    "relative_threshold": 1e-3,
    "target_connections": None,
    "knn": None,
}

DEFAULTS = {
    "generate": {"dims": 4, "per_cluster": 100, "cluster_std": 0.1, "noise_std": 0.0, "seed": 0},
    "train": TRAIN_DEFAULTS,
    "evaluate": {"split": "test", "knn": None, "results": None},
    "sweep": {**TRAIN_DEFAULTS, "lambda_grid": None, "parallel": 1},
}


# -- small helpers -------------------------------------------------------------


def content_hash(path) -> str:
    """Git blob hash of a file's bytes."""
    payload = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _parse_floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def _parse_hidden(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    if str(text).strip() == "":
        return ()
    return tuple(int(v) for v in str(text).split(","))


def train_config(opts: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        lam=float(opts["lambda"]),
        gamma=float(opts["gamma"]),
        exclusive_weight=opts["exclusive_weight"],
        substitution=bool(opts["substitution"]),
        adam_lr=float(opts["adam_lr"]),
        prox_lr=float(opts["prox_lr"]),
        batch_size=opts["batch_size"],
        prox_batch_size=opts["prox_batch_size"],
        max_epochs=int(opts["max_epochs"]),
        prox_max_epochs=int(opts["prox_max_epochs"]),
        patience=int(opts["patience"]),
        min_delta=float(opts["min_delta"]),
        seed=int(opts["seed"]),
        block_splits=opts["block_splits"],
        boolean_threshold=bool(opts["boolean_threshold"]),
    )


def prepare_dataset(opts: dict) -> data.Dataset:
    ds = data.load_csv(opts["data"], has_labels=opts["has_labels"], skip_header=opts["skip_header"])
    ds = data.split(ds, opts["test_frac"], opts["val_frac"], opts["split_seed"])
    return data.standardize(ds) if opts["standardize"] else ds


# -- fitting ---------------------------------------------------------------------


@dataclass
class FitResult:
    method: str
    model: object  # trainer.Autoencoder or baselines.PcaModel
    report: Optional[trainer.TrainReport]
    connections: np.ndarray

    @property
    def n_connections(self) -> int:
        return evaluation.count_connections(self.connections)

    def model_dict(self) -> dict:
        return {"method": self.method, "params": self.model.to_dict()}


def load_model(d: dict):
    if d["method"] == "pca":
        return baselines.PcaModel.from_dict(d["params"])
    return trainer.Autoencoder.from_dict(d["params"])


def fit(ds: data.Dataset, method: str, latent_dim: int, config: trainer.TrainConfig,
        hidden: Sequence[int] = (50,), threshold=None, relative_threshold: float = 1e-3,
        target_connections: Optional[int] = None) -> FitResult:
    """Fit one model on the training split of ``ds``."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "pca":
        X_train, _ = ds.part("train")
        model = baselines.pca_fit(X_train, latent_dim)
        return FitResult(method, model, None, model.connections())
    spec = trainer.AutoencoderSpec(ds.d, latent_dim, tuple(hidden))
    if method == "pathlasso":
        ae, report = trainer.train_three_stage(ds, spec, config)
    elif method == "plain":
        ae, report = baselines.plain_ae_train(ds, spec, config)
    else:
        ae, _, report = baselines.lasso_ae_train(
            ds, spec, config.lam, threshold, config, relative_threshold, target_connections
        )
    return FitResult(method, ae, report, report.connections)


def metrics_for(result: FitResult, ds: data.Dataset, part: str, knn: Optional[int] = None) -> evaluation.MetricReport:
    X, labels = ds.part(part)
    return evaluation.evaluate(X, result.model.reconstruct(X), labels, knn, result.connections)


def write_curves(report: Optional[trainer.TrainReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "train_objective", "val_objective"])
        if report is not None:
            for stage, rows in report.curves.items():
                for epoch, (tr, va) in enumerate(rows):
                    w.writerow([stage, epoch, repr(float(tr)), repr(float(va))])


def append_results(path, row: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(row)


# -- commands ------------------------------------------------------------------


def cmd_generate(opts: dict) -> dict:
    out = Path(opts["out"])
    ds = data.generate_hypercube(int(opts["dims"]), int(opts["per_cluster"]), float(opts["cluster_std"]),
                                 float(opts["noise_std"]), int(opts["seed"]))
    t0 = time.perf_counter()
    data.save_csv(ds, out / "data.csv")
    manifest = {
        "command": "generate",
        "config": {k: opts[k] for k in DEFAULTS["generate"]},
        "seed": int(opts["seed"]),
        "shape": list(ds.x.shape),
        "outputs": {"data": "data.csv", "manifest": "manifest.json"},
        "output_hashes": {"data": content_hash(out / "data.csv")},
    }
    write_json(manifest, out / "manifest.json")
    write_json({"seconds": time.perf_counter() - t0}, out / "timing.json")
    return manifest


def _train_into(opts: dict, out: Path) -> dict:
    t0 = time.perf_counter()
    ds = prepare_dataset(opts)
    config = train_config(opts)
    result = fit(ds, opts["method"], int(opts["latent_dim"]), config, _parse_hidden(opts["hidden"]),
                 opts["threshold"], float(opts["relative_threshold"]), opts["target_connections"])
    write_json(result.model_dict(), out / "model" / "model.json")
    write_json(
        {"mean": None if ds.mean is None else ds.mean.tolist(),
         "scale": None if ds.scale is None else ds.scale.tolist()},
        out / "model" / "standardization.json",
    )
    if result.report is not None:
        write_json(result.report.to_dict(include_timing=False), out / "report.json")
    write_curves(result.report, out / "curves.csv")
    data.write_matrix_csv(result.connections, out / "connections.csv")
    X_test, _ = ds.part("test")
    data.write_matrix_csv(result.model.encode(X_test), out / "latent.csv")
    knn = opts["knn"]
    metrics = {
        "val": metrics_for(result, ds, "val", knn).to_dict(),
        "test": metrics_for(result, ds, "test", knn).to_dict(),
        "connections": result.n_connections,
    }
    write_json(metrics, out / "metrics.json")
    manifest = {
        "command": "train",
        "config": {k: opts[k] for k in TRAIN_DEFAULTS} | {"data": str(opts["data"])},
        "train_config": config.to_dict(),
        "seed": int(opts["seed"]),
        "input_hashes": {"data": content_hash(opts["data"])},
        "outputs": {
            "model": "model/model.json",
            "metrics": "metrics.json",
            "curves": "curves.csv",
            "connections": "connections.csv",
            "latent": "latent.csv",
            **({"report": "report.json"} if result.report is not None else {}),
        },
    }
    write_json(manifest, out / "manifest.json")
    timing = {"seconds": time.perf_counter() - t0}
    if result.report is not None:
        timing["stage_seconds"] = result.report.stage_seconds
    write_json(timing, out / "timing.json")
    return metrics


def cmd_train(opts: dict) -> dict:
    return _train_into(opts, Path(opts["out"]))


def cmd_evaluate(opts: dict) -> dict:
    """Score a trained run directory on a split of ``--data`` (defaults to the run's own data)."""
    t0 = time.perf_counter()
    run = Path(opts["model"])
    run_manifest = read_json(run / "manifest.json")
    run_opts = dict(run_manifest["config"])
    if opts.get("data"):
        run_opts["data"] = opts["data"]
    ds = data.load_csv(run_opts["data"], has_labels=run_opts["has_labels"], skip_header=run_opts["skip_header"])
    ds = data.split(ds, run_opts["test_frac"], run_opts["val_frac"], run_opts["split_seed"])
    std = read_json(run / "model" / "standardization.json")
    if std["mean"] is not None:
        mean, scale = np.array(std["mean"]), np.array(std["scale"])
        if mean.shape != (ds.d,):
            raise ShapeError(f"model expects {mean.shape[0]} columns, data has {ds.d}")
        ds = data.Dataset((ds.x - mean) / scale, ds.labels, ds.train_idx, ds.val_idx, ds.test_idx, mean, scale)
    model_d = read_json(run / "model" / "model.json")
    model = load_model(model_d)
    d_in = model.mean.shape[0] if model_d["method"] == "pca" else model.d_x
    if d_in != ds.d:
        raise ShapeError(f"model expects {d_in} columns, data has {ds.d}")
    result = FitResult(model_d["method"], model, None, model.connections())
    X, labels = ds.part(opts["split"])
    recon = model.reconstruct(X)
    report = evaluation.evaluate(X, recon, labels, opts["knn"], result.connections)
    out = Path(opts["out"])
    write_json(report.to_dict(), out / "metrics.json")
    data.write_matrix_csv(model.encode(X), out / "latent.csv")
    data.write_matrix_csv(recon, out / "reconstruction.csv")
    results_path = opts["results"] or out / "results.csv"
    append_results(results_path, {"run": str(run), "method": model_d["method"], "split": opts["split"],
                                  **{k: getattr(report, k) for k in ("r2", "obs_match", "label_match",
                                                                   "knn_match", "knn_k", "connections")}})
    write_json({
        "command": "evaluate",
        "config": {"model": str(run), "data": str(run_opts["data"]), "split": opts["split"], "knn": opts["knn"]},
        "seed": run_manifest["seed"],
        "input_hashes": {"data": content_hash(run_opts["data"]), "model": content_hash(run / "model" / "model.json")},
        "outputs": {"metrics": "metrics.json", "latent": "latent.csv", "reconstruction": "reconstruction.csv",
                    "results": str(results_path)},
    }, out / "manifest.json")
    write_json({"seconds": time.perf_counter() - t0}, out / "timing.json")
    return report.to_dict()


def _sweep_one(args):
    opts, out = args
    metrics = _train_into(opts, Path(out))
    return metrics


def select_closest(lambdas: Sequence[float], counts: Sequence[int], target: int) -> int:
    """Index of the run whose count is closest to ``target``; ties go to the larger lambda."""
    best = None
    for i, (lam, count) in enumerate(zip(lambdas, counts)):
        key = (abs(count - target), -lam)
        if best is None or key < best[0]:
            best = (key, i)
    return best[1]


def cmd_sweep(opts: dict) -> dict:
    target = opts["target_connections"]
    grid = opts["lambda_grid"]
    if grid is None:
        if target is None:
            raise ConfigError("sweep needs --lambda-grid or --target-connections")
        grid = DEFAULT_LAMBDA_GRID
    lambdas = _parse_floats(grid)
    if not lambdas:
        raise ConfigError("lambda grid is empty")
    out = Path(opts["out"])
    jobs = []
    for i, lam in enumerate(lambdas):
        run_opts = dict(opts, **{"lambda": lam})
        jobs.append((run_opts, str(out / "runs" / f"run_{i:03d}")))
    t0 = time.perf_counter()
    if int(opts["parallel"]) > 1:
        with ProcessPoolExecutor(max_workers=int(opts["parallel"])) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(job) for job in jobs]
    table = out / "results.csv"
    if table.exists():
        table.unlink()
    for (run_opts, run_dir), metrics in zip(jobs, results):
        append_results(table, {"run": Path(run_dir).name, "lambda": run_opts["lambda"],
                               "connections": metrics["connections"],
                               "val_r2": metrics["val"]["r2"], "test_r2": metrics["test"]["r2"]})
    selected = None
    if target is not None:
        idx = select_closest(lambdas, [m["connections"] for m in results], int(target))
        selected = {"run": Path(jobs[idx][1]).name, "lambda": lambdas[idx], **results[idx]}
    summary = {"runs": len(lambdas), "selected": selected}
    write_json({
        "command": "sweep",
        "config": {k: opts[k] for k in DEFAULTS["sweep"]} | {"data": str(opts["data"]), "lambda_grid": lambdas},
        "seed": int(opts["seed"]),
        "input_hashes": {"data": content_hash(opts["data"])},
        "outputs": {"results": "results.csv", "runs": [Path(r).name for _, r in jobs]},
        "selected": selected,
    }, out / "manifest.json")
    write_json({"seconds": time.perf_counter() - t0}, out / "timing.json")
    return summary


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


# -- argument parsing -------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input CSV")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths (default 50)")
    p.add_argument("--lambda", type=float, dest="lambda")
    p.add_argument("--has-labels", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--skip-header", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=argparse.SUPPRESS)
    p.add_argument("--test-frac", type=float)
    p.add_argument("--val-frac", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--exclusive-weight", type=float)
    p.add_argument("--no-substitution", dest="substitution", action="store_false", default=argparse.SUPPRESS)
    p.add_argument("--adam-lr", type=float)
    p.add_argument("--prox-lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--prox-batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--prox-max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--min-delta", type=float)
    p.add_argument("--block-splits", type=json.loads, help="JSON list, e.g. '[1,2,1]'")
    p.add_argument("--boolean-threshold", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--threshold", type=float, help="lasso: absolute weight cut")
    p.add_argument("--relative-threshold", type=float, help="lasso: cut as a fraction of max |w|")
    p.add_argument("--target-connections", type=int)
    p.add_argument("--knn", type=int, help="also report k-NN reconstruction match")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathlasso", description=__doc__.splitlines()[0],
                                     argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a hypercube-cluster dataset", argument_default=argparse.SUPPRESS)
    g.add_argument("--dims", type=int)
    g.add_argument("--per-cluster", type=int)
    g.add_argument("--cluster-std", type=float)
    g.add_argument("--noise-std", type=float)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="fit one model", argument_default=argparse.SUPPRESS)
    _add_train_flags(t)

    e = sub.add_parser("evaluate", help="score a trained run", argument_default=argparse.SUPPRESS)
    e.add_argument("--model", help="run directory written by train")
    e.add_argument("--data", help="CSV to score (defaults to the run's data)")
    e.add_argument("--split", choices=("train", "val", "test", "all"))
    e.add_argument("--knn", type=int)
    e.add_argument("--results", help="results table to append to")

    s = sub.add_parser("sweep", help="train over a lambda grid", argument_default=argparse.SUPPRESS)
    _add_train_flags(s)
    s.add_argument("--lambda-grid", help="comma-separated lambda values")
    s.add_argument("--parallel", type=int)

    for p in (g, t, e, s):
        p.add_argument("--config", help="JSON file supplying any flag")
        p.add_argument("--out", help="output directory")
    return parser


def resolve_options(command: str, flags: dict) -> dict:
    """Defaults, then ``--config`` values, then explicit flags."""
    opts = dict(DEFAULTS[command])
    if "config" in flags:
        loaded = read_json(flags["config"])
        if not isinstance(loaded, dict):
            raise ConfigError("--config must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in opts and key not in ("data", "out", "model"):
                raise ConfigError(f"unknown config key {key!r} for {command}")
            opts[key] = value
    opts.update({k: v for k, v in flags.items() if k not in ("config", "command")})
    required = {"generate": ("out",), "train": ("data", "out"), "evaluate": ("model", "out"),
                "sweep": ("data", "out")}[command]
    missing = [k for k in required if not opts.get(k)]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
    return opts


def _error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("stage", "step", "row", "column", "diagnostics"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    return payload


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args["command"]
    try:
        opts = resolve_options(command, args)
        result = COMMANDS[command](opts)
    except (PathLassoError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps(_error_payload(exc), default=str), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
