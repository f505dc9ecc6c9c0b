"""Command line entry point: ``latlapmed {simulate,fit,predict,sweep,bench}``.

Configuration is one JSON document with optional sections::

    {"sim": {...SimConfig...}, "fit": {...FitConfig...},
     "sweep": {"phis": [...], "trials": 10, "methods": [...]},
     "bench": {"n_grid": [...], "p": 3}}

Precedence is built-in defaults < config file < command-line flags
(``--seed`` sets ``sim.seed``, ``--method``/``--workers`` override the sweep
section). Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .artifacts import StoredModel, dump_json, file_digest, model_to_dict
from .dataset import Dataset, load_csv, write_csv
from .em import (
    METHODS, FitConfig, FitError, MethodRunner, fit_lapmed_oracle, fit_latlapmed,
    fit_two_stage, in_sample_predictions, predict,
)
from .evaluation import SweepError, confusion, pr_sweep, write_sweep
from .gem import init_gem, penalized_edges
from .med_solver import SolverError
from .simgen import SimConfig, generate

logger = logging.getLogger("latlapmed")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
DEFAULT_PHIS = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07)
SECTIONS = ("sim", "fit", "sweep", "bench")


class UsageError(ValueError):
    pass


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with Path(path).open(encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be an object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return cfg


def sim_config(cfg: dict, seed) -> SimConfig:
    sc = SimConfig.from_dict(cfg.get("sim", {}))
    return sc if seed is None else replace(sc, seed=seed).validate()


def fit_config(cfg: dict) -> FitConfig:
    return FitConfig.from_dict(cfg.get("fit", {}))


def _section(cfg, name, allowed):
    sec = dict(cfg.get(name, {}))
    unknown = set(sec) - set(allowed)
    if unknown:
        raise UsageError(f"unknown {name} config field(s): {', '.join(sorted(unknown))}")
    return sec


def _methods(arg, default):
    methods = arg if arg else default
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    return list(methods)


def manifest(args, cfg, files, **extra) -> dict:
    from . import __version__
    return {
        "command": args.command,
        "seed": args.seed,
        "config": cfg,
        "files": {name: file_digest(path) for name, path in sorted(files.items())},
        "version": __version__,
        **extra,
    }


def _load_or_simulate(args, cfg):
    if args.data:
        return load_csv(args.data), str(args.data)
    d = generate(sim_config(cfg, args.seed))
    path = Path(args.out) / "dataset.csv"
    write_csv(d, path)
    return d, str(path)


def _write_metrics(rec, method, out):
    dump_json({"method": method, **rec.to_dict()}, out / "metrics.json")
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        row = rec.to_dict()
        w.writerow(["method", *row])
        w.writerow([method, *(repr(v) for v in row.values())])


def cmd_simulate(args, cfg):
    sc = sim_config(cfg, args.seed)
    out = Path(args.out)
    d = generate(sc)
    write_csv(d, out / "dataset.csv")
    dump_json(manifest(args, {"sim": sc.to_dict()}, {"dataset.csv": out / "dataset.csv"},
                       n=d.n, p=d.p, n_labeled=d.n_labeled), out / "manifest.json")
    print(f"wrote {d.n} rows to {out / 'dataset.csv'}")


def cmd_fit(args, cfg):
    out = Path(args.out)
    method = _methods([args.method] if args.method else None, ["latlapmed"])[0]
    fc = fit_config(cfg)
    d, data_path = _load_or_simulate(args, cfg)
    if method == "lapmed_oracle":
        if d.truth_anomaly is None:
            raise UsageError("method lapmed_oracle needs the truth_anomaly column")
        res = fit_lapmed_oracle(d, fc)
        mask = d.truth_anomaly
        pred = in_sample_predictions(mask, res)
    else:
        res = (fit_latlapmed if method == "latlapmed" else fit_two_stage)(d, fc)
        mask = res.anomaly_mask
        pred = predict(res)
    model = model_to_dict(method, res, mask, fc, train_data=str(Path(data_path).resolve()),
                          train_digest=file_digest(data_path))
    dump_json(model, out / "model.json")
    files = {"model.json": out / "model.json"}
    summary = {"method": method, "iterations": model["iterations"],
               "converged": model["converged"], "n_anomalous": int(np.count_nonzero(mask))}
    if d.truth_utility is not None:
        rec = confusion(pred, d.truth_utility)
        _write_metrics(rec, method, out)
        files.update({"metrics.json": out / "metrics.json", "metrics.csv": out / "metrics.csv"})
        summary.update(recall=rec.recall, precision=rec.precision)
    dump_json(manifest(args, {"fit": fc.to_dict()}, files, **summary), out / "manifest.json")
    print(json.dumps(summary, sort_keys=True))


def cmd_predict(args, cfg):
    if not args.model:
        raise UsageError("predict needs --model")
    out = Path(args.out)
    model = StoredModel.load(args.model)
    if args.data:
        if not model.train_data:
            raise UsageError("the model file does not name its training data")
        if file_digest(model.train_data) != model.train_sha256:
            raise UsageError(f"training data {model.train_data} changed since the model was fit")
        train = load_csv(model.train_data)
        queries = load_csv(args.data, require_labels=False)
        pred = model.predict(train, queries.features)
    else:
        pred = model.predict_in_sample()
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "prediction"])
        w.writerows([i, int(v)] for i, v in enumerate(pred))
    files = {"predictions.csv": out / "predictions.csv"}
    extra = {"n_predictions": len(pred), "n_positive": int(np.sum(pred > 0))}
    if args.data:
        q = load_csv(args.data, require_labels=False)
        if q.truth_utility is not None:
            rec = confusion(pred, q.truth_utility)
            _write_metrics(rec, model.method, out)
            files.update({"metrics.json": out / "metrics.json", "metrics.csv": out / "metrics.csv"})
            extra.update(recall=rec.recall, precision=rec.precision)
    dump_json(manifest(args, {"model": str(args.model)}, files, **extra), out / "manifest.json")
    print(json.dumps(extra, sort_keys=True))


def cmd_sweep(args, cfg):
    out = Path(args.out)
    sec = _section(cfg, "sweep", ("phis", "trials", "methods", "workers"))
    phis = [float(f) for f in sec.get("phis", DEFAULT_PHIS)]
    if not phis:
        raise UsageError("the phi grid is empty")
    trials = int(sec.get("trials", 10))
    workers = args.workers if args.workers is not None else int(sec.get("workers", 1))
    methods = _methods(args.method and [args.method], sec.get("methods", ["latlapmed", "two_stage"]))
    fc = fit_config(cfg)
    sc = sim_config(cfg, args.seed)
    if args.data:
        data = load_csv(args.data)
    else:
        data = _SimFactory(sc)
    files, table = {}, []
    for m in methods:
        curve = pr_sweep(MethodRunner(m, fc), data, phis, trials=trials, seed=sc.seed,
                         workers=workers)
        write_sweep(curve, m, out)
        files[f"sweep_{m}.csv"] = out / f"sweep_{m}.csv"
        files[f"sweep_{m}.json"] = out / f"sweep_{m}.json"
        table.append({"method": m, "auc": curve.auc})
        print(f"{m:15s} AUC-PR {curve.auc:.4f}")
    with (out / "auc_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "auc"])
        w.writerows([r["method"], repr(r["auc"])] for r in table)
    files["auc_table.csv"] = out / "auc_table.csv"
    dump_json(manifest(args, {"sim": sc.to_dict(), "fit": fc.to_dict(),
                              "sweep": {"phis": phis, "trials": trials, "methods": methods}},
                       files, auc=table), out / "manifest.json")


class _SimFactory:
    """Picklable ``seed -> Dataset`` for trial ``t`` at root seed ``seed + t``."""

    def __init__(self, sc: SimConfig):
        self.sc = sc

    def __call__(self, seed: int) -> Dataset:
        return generate(replace(self.sc, seed=seed))


def cmd_bench(args, cfg):
    out = Path(args.out)
    sec = _section(cfg, "bench", ("n_grid", "p", "repeats"))
    n_grid = [int(n) for n in sec.get("n_grid", [1000, 2000, 4000])]
    repeats = int(sec.get("repeats", 3))
    fc = fit_config(cfg)
    sc = sim_config(cfg, args.seed)
    if "p" in sec:
        sc = replace(sc, p=int(sec["p"])).validate()
    rows = []
    for n in n_grid:
        d = generate(replace(sc, n=n).validate())
        init_t = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            state = init_gem(d.features, fc.gem_config())
            init_t.append(time.perf_counter() - t0)
        res = fit_latlapmed(d, fc, gem_state=state)
        sort_t = []
        d_hat = np.zeros(n)
        d_hat[res.model.subset] = res.model.train_decision
        for _ in range(repeats):
            t0 = time.perf_counter()
            penalized_edges(state, d_hat, res.labels, fc.rho)
            sort_t.append(time.perf_counter() - t0)
        rows.append({
            "n": n,
            "p": d.p,
            "init_seconds": min(init_t),
            "e_step_seconds": [r.e_step_seconds for r in res.trace],
            "m_step_seconds": [r.m_step_seconds for r in res.trace],
            "e_step_sort_seconds": min(sort_t),
            "n_anomalous": [r.n_anomalous for r in res.trace],
            "iterations": res.iterations,
        })
        print(f"n={n:7d} init {min(init_t):.3f}s  M-step {np.mean(rows[-1]['m_step_seconds']):.3f}s")
    for prev, cur in zip(rows, rows[1:]):
        cur["init_ratio_vs_previous"] = cur["init_seconds"] / prev["init_seconds"]
    dump_json({"config": {"sim": sc.to_dict(), "fit": fc.to_dict()}, "runs": rows},
              out / "bench.json")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "sweep": cmd_sweep, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latlapmed", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="root seed (overrides sim.seed)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--method", help="one of " + ", ".join(METHODS))
    ap.add_argument("--workers", type=int, help="parallel trial workers for sweep")
    ap.add_argument("--data", help="dataset CSV (fit/sweep: training data; predict: queries)")
    ap.add_argument("--model", help="model.json written by fit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _is_numerical(exc) -> bool:
    if isinstance(exc, SweepError):
        exc = exc.__cause__ or exc
    return isinstance(exc, (FitError, SolverError, np.linalg.LinAlgError, FloatingPointError))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be non-negative")
        if args.workers is not None and args.workers < 1:
            raise UsageError("--workers must be >= 1")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        cfg = read_config(args.config)
        COMMANDS[args.command](args, cfg)
    except Exception as exc:
        if _is_numerical(exc):
            where = getattr(exc, "iteration", None)
            suffix = f" (EM iteration {where})" if where is not None else ""
            print(f"latlapmed: numerical failure: {exc}{suffix}", file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(exc, (ValueError, TypeError, OSError, KeyError)):
            print(f"latlapmed: {exc}", file=sys.stderr)
            return EXIT_INVALID
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
