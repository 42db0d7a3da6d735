"""Command-line interface: simulate, fit, predict, filter.

Every run writes exactly one manifest JSON next to its outputs, recording
the command, its parameters, SHA-256 hashes of the inputs, the seed, wall
times per phase, and the paths written. Exit codes: 0 success, 1 usage,
2 invalid parameter values, 3 bad input data, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, Task, load_csv, split_train_valid
from .losses import init_offset, mean_loss
from .model import (
    ConfigError,
    FitConfig,
    FittedModel,
    ModelFormatError,
    fit_model,
    load_model,
    predict,
    save_model,
)
from .purify import (
    assemble_raw_effects,
    export_effect_grids,
    importance,
    purify_effects,
    write_importance_csv,
)
from .screening import filter_interactions, rank_pairs_fast, ranking_to_csv
from .simulate import SimScenario, scenario_splits
from .trees import TreeParams
from .util import fmt_float, sha256_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


class _Manifest:
    def __init__(self, command: str, params: dict, seed):
        self.doc = {
            "command": command,
            "params": params,
            "seed": seed,
            "inputs": {},
            "outputs": [],
            "timings": {},
        }
        self._t0 = None
        self._phase = None

    def add_input(self, path):
        self.doc["inputs"][str(path)] = sha256_file(path)

    def add_output(self, path):
        self.doc["outputs"].append(str(path))

    def start(self, phase: str):
        self._phase = phase
        self._t0 = time.perf_counter()

    def stop(self):
        if self._phase is not None:
            self.doc["timings"][self._phase] = time.perf_counter() - self._t0
            self._phase = None

    def write(self, path):
        Path(path).write_text(json.dumps(self.doc, sort_keys=True, indent=1) + "\n")


def _write_csv(path, header, columns):
    rows = zip(*columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) for v in row])


def _task(value: str) -> Task:
    try:
        return Task(value)
    except ValueError:
        raise ConfigError(f"task must be 'continuous' or 'binary', not {value!r}")


def auc_score(y: np.ndarray, score: np.ndarray) -> float:
    """Rank-sum AUC with midranks for ties."""
    y = np.asarray(y, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(score, kind="mergesort")
    ranks = np.empty(len(score), dtype=np.float64)
    sorted_scores = score[order]
    i = 0
    while i < len(score):
        j = i
        while j + 1 < len(score) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _add_fit_flags(p: argparse.ArgumentParser):
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--npairs", type=int, default=10)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=0.2)
    p.add_argument("--nknots", type=int, default=5)
    p.add_argument("--max-coef", type=float, default=1.0)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--max-bins", type=int, default=256)
    p.add_argument("--min-leaf", type=int, default=20)
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--subsample", type=int, default=1_000_000,
                   help="row cap for pair screening")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: all cores)")


def _config_from_args(args) -> FitConfig:
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    return FitConfig(
        max_iterations=args.max_iterations,
        learning_rate=args.learning_rate,
        max_depth=args.max_depth,
        nknots=args.nknots,
        rounds=args.rounds,
        npairs=args.npairs,
        max_coef=args.max_coef,
        patience=args.patience,
        min_leaf=args.min_leaf,
        max_bins=args.max_bins,
        filter_subsample=args.subsample,
        seed=args.seed,
        threads=threads,
    )


def cmd_simulate(args) -> int:
    scenario = SimScenario(
        model_id=args.model, n=args.n, rho=args.rho, task=_task(args.task),
        seed=args.seed,
    )
    man = _Manifest(
        "simulate",
        {"model": args.model, "n": args.n, "rho": args.rho, "task": args.task},
        args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man.start("generate")
    train, valid, test, b0 = scenario_splits(scenario)
    man.stop()
    man.start("write")
    from .simulate import feature_names, true_pairs

    names = feature_names()
    header = list(names) + ["y"]
    for part, ds in (("train", train), ("valid", valid), ("test", test)):
        path = out_dir / f"{part}.csv"
        cols = [ds.column(j) for j in range(ds.p)] + [ds.target]
        _write_csv(path, header, cols)
        man.add_output(path)
    man.stop()
    man.doc["scenario"] = {
        "model": args.model,
        "n": args.n,
        "rho": args.rho,
        "task": args.task,
        "balanced_intercept": b0,
        "true_pairs": [[names[j], names[k]] for j, k in true_pairs(args.model)],
        "split": [train.n, valid.n, test.n],
    }
    man.write(out_dir / "manifest.json")
    print(f"wrote {train.n}/{valid.n}/{test.n} rows to {out_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _config_from_args(args)
    task = _task(args.task)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man = _Manifest(
        "fit",
        {
            "train": args.train, "valid": args.valid, "target": args.target,
            "task": args.task, "rounds": args.rounds, "npairs": args.npairs,
            "max_depth": args.max_depth, "learning_rate": args.learning_rate,
            "nknots": args.nknots, "max_coef": args.max_coef,
            "patience": args.patience, "max_bins": args.max_bins,
            "min_leaf": args.min_leaf, "max_iterations": args.max_iterations,
            "threads": config.threads, "grid_size": args.grid_size,
        },
        args.seed,
    )
    man.start("load")
    train = load_csv(args.train, args.target, task)
    man.add_input(args.train)
    if args.valid:
        valid = load_csv(args.valid, args.target, task)
        man.add_input(args.valid)
    else:
        train, valid = split_train_valid(train, args.valid_fraction, args.seed)
    man.stop()

    man.start("fit")
    model = fit_model(train, valid, config, target_name=args.target)
    man.stop()
    for r, rnd in enumerate(model.rounds, start=1):
        print(
            f"round {r}: {rnd.main.stop_iterations} main trees, "
            f"{rnd.interaction.stop_iterations} interaction trees"
        )
    g_valid = predict(model, valid)
    print(f"final validation loss: {mean_loss(valid.target, g_valid, task):.6f}")

    man.start("purify")
    effects = purify_effects(assemble_raw_effects(model), train, config.nknots)
    importance(effects, train)
    man.stop()

    man.start("export")
    model_path = out_dir / "model.json"
    save_model(model, model_path)
    man.add_output(model_path)
    export_effect_grids(effects, train, out_dir / "effects", grid_size=args.grid_size)
    man.add_output(out_dir / "effects" / "index.json")
    imp_path = out_dir / "importance.csv"
    write_importance_csv(effects, train, imp_path)
    man.add_output(imp_path)
    man.stop()
    man.write(out_dir / "manifest.json")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model_file)
    man = _Manifest(
        "predict", {"model_file": args.model_file, "data": args.data}, None
    )
    man.add_input(args.model_file)
    ds_task = model.task
    man.start("load")
    # the target column may be absent at prediction time; fall back to a
    # dummy zero target so Dataset validation still passes
    with open(args.data, newline="") as fh:
        header = next(csv.reader(fh))
    target = model.target_name if model.target_name in header else None
    if target is None:
        raw = load_csv_no_target(args.data)
        ds = Dataset(raw[0], raw[1], np.zeros(raw[1].shape[0]), Task.CONTINUOUS)
        y = None
    else:
        ds = load_csv(args.data, target, ds_task)
        y = ds.target
    man.add_input(args.data)
    man.stop()

    man.start("predict")
    link = predict(model, ds)
    man.stop()
    out = Path(args.out)
    if model.task is Task.BINARY:
        prob = predict(model, ds, kind="prob")
        _write_csv(out, ["prediction", "probability"], [link, prob])
    else:
        _write_csv(out, ["prediction"], [link])
    man.add_output(out)

    if y is not None:
        metrics = {}
        if model.task is Task.CONTINUOUS:
            metrics["mse"] = float(np.mean((y - link) ** 2))
        else:
            metrics["log_loss"] = mean_loss(y, link, Task.BINARY)
            metrics["auc"] = auc_score(y, link)
        man.doc["metrics"] = metrics
        for k, v in metrics.items():
            print(f"{k}: {v:.6f}")
    man.write(str(out) + ".manifest.json")
    return EXIT_OK


def load_csv_no_target(path):
    """Headered numeric CSV without a target column; returns (names, matrix)."""
    import math as _math

    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = []
        for i, rec in enumerate(reader, start=1):
            if len(rec) != len(header):
                raise DataError(f"{path}: row {i} has {len(rec)} cells")
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                raise DataError(f"{path}: row {i} has a non-numeric cell") from None
            if any(not _math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {i} has a non-finite cell")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return tuple(header), np.array(rows, dtype=np.float64)


def cmd_filter(args) -> int:
    task = _task(args.task)
    man = _Manifest(
        "filter",
        {"data": args.data, "target": args.target, "task": args.task,
         "npairs": args.npairs, "fast": args.fast,
         "model_file": args.model_file},
        args.seed,
    )
    man.start("load")
    ds = load_csv(args.data, args.target, task)
    man.add_input(args.data)
    if args.model_file:
        model = load_model(args.model_file)
        man.add_input(args.model_file)
        g = predict(model, ds)
    else:
        g = np.full(ds.n, init_offset(ds.target, task))
    man.stop()

    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    params = TreeParams(max_bins=args.max_bins)
    man.start("screen")
    if args.fast:
        ranking = rank_pairs_fast(
            ds, g, args.npairs, subsample=args.subsample, seed=args.seed,
            threads=threads,
        )
    else:
        ranking = filter_interactions(
            ds, g, args.npairs, params, subsample=args.subsample,
            seed=args.seed, threads=threads,
        )
    man.stop()
    ranking_to_csv(ranking, ds.names, args.out)
    man.add_output(args.out)
    man.write(str(args.out) + ".manifest.json")
    for j, k in ranking.top_pairs:
        print(f"{ds.names[j]}:{ds.names[k]}  {ranking.scores[(j, k)]:.6g}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mbgam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic train/valid/test split")
    p.add_argument("--model", type=int, required=True, choices=(1, 2, 3, 4))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--task", default="continuous")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model and export its components")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", default=None)
    p.add_argument("--valid-fraction", type=float, default=0.25)
    p.add_argument("--target", default="y")
    p.add_argument("--task", default="continuous")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    _add_fit_flags(p)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("predict", help="apply a saved model to a CSV")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("filter", help="rank predictor pairs by interaction strength")
    p.add_argument("--data", required=True)
    p.add_argument("--target", default="y")
    p.add_argument("--task", default="continuous")
    p.add_argument("--npairs", type=int, default=10)
    p.add_argument("--fast", action="store_true",
                   help="use the four-quadrant baseline scorer")
    p.add_argument("--model-file", default=None,
                   help="score residuals of this model instead of the offset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-bins", type=int, default=256)
    p.add_argument("--subsample", type=int, default=1_000_000)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_filter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit:
        raise
    except (ConfigError,) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, ModelFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
