"""Confusion rates, anomaly-level PR sweeps and area under the PR curve."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .dataset import Dataset


@dataclass(frozen=True)
class MetricRecord:
    tp: int
    fp: int
    tn: int
    fn: int
    recall: float
    precision: float
    fpr: float
    fnr: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den) -> float:
    return float(num) / den if den else 0.0


def confusion(pred, truth) -> MetricRecord:
    """Counts and rates with +1 (high utility) as the positive class; 0/0 -> 0."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction length {pred.shape} differs from truth {truth.shape}")
    pp, tp_ = pred > 0, truth > 0
    tp = int(np.sum(pp & tp_))
    fp = int(np.sum(pp & ~tp_))
    tn = int(np.sum(~pp & ~tp_))
    fn = int(np.sum(~pp & tp_))
    recall = _ratio(tp, tp + fn)
    return MetricRecord(tp, fp, tn, fn, recall, _ratio(tp, tp + fp), _ratio(fp, fp + tn), 1.0 - recall)


def auc_pr(points) -> float:
    """Trapezoidal area under (recall, precision) points.

    Points are sorted by recall; the curve starts at (0, precision of the
    lowest-recall point) and stops at the largest observed recall.
    """
    pts = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return 0.0
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    r = np.concatenate([[0.0], pts[:, 0]])
    p = np.concatenate([[pts[0, 1]], pts[:, 1]])
    return float(np.sum(np.diff(r) * 0.5 * (p[1:] + p[:-1])))


@dataclass(frozen=True)
class PRCurve:
    phis: tuple
    recall: tuple
    precision: tuple
    auc: float
    records: tuple = ()   # (phi, trial, MetricRecord) for every fit

    @classmethod
    def from_records(cls, phis, records) -> "PRCurve":
        rec, prec = [], []
        for phi in phis:
            rows = [m for (f, _, m) in records if f == phi]
            rec.append(float(np.mean([m.recall for m in rows])))
            prec.append(float(np.mean([m.precision for m in rows])))
        return cls(tuple(phis), tuple(rec), tuple(prec), auc_pr(zip(rec, prec)), tuple(records))

    def summary(self, method: str) -> dict:
        return {
            "method": method,
            "auc": self.auc,
            "per_phi": [
                {"phi": f, "recall": r, "precision": p}
                for f, r, p in zip(self.phis, self.recall, self.precision)
            ],
        }


class SweepError(RuntimeError):
    def __init__(self, message, phi, trial):
        super().__init__(message)
        self.phi = phi
        self.trial = trial


Runner = Callable[[Dataset, float, int], np.ndarray]
DataSource = Union[Dataset, Callable[[int], Dataset]]


def _run_trial(runner, data, phis, trial, seed):
    d = data(seed) if callable(data) else data
    if d.truth_utility is None:
        raise ValueError("PR sweeps need ground-truth utility labels")
    out = []
    for phi in phis:
        try:
            pred = runner(d, phi, seed)
        except Exception as exc:
            raise SweepError(f"fit failed at phi={phi}, trial={trial}: {exc}", phi, trial) from exc
        out.append((phi, trial, confusion(pred, d.truth_utility)))
    return out


def pr_sweep(runner: Runner, data: DataSource, phis: Sequence[float], trials: int = 1,
             seed: int = 0, workers: int = 1) -> PRCurve:
    """Average (recall, precision) per anomaly level over ``trials`` runs.

    ``data`` is either a fixed dataset or a factory called with the trial seed
    ``seed + t``. ``runner(dataset, phi, trial_seed)`` returns in-sample
    predictions. Averaging happens per phi, never on pooled predictions.
    """
    phis = tuple(float(f) for f in phis)
    if not phis:
        raise ValueError("the phi grid is empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    args = [(runner, data, phis, t, seed + t) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_trial, *zip(*args)))
    else:
        chunks = [_run_trial(*a) for a in args]
    records = [r for chunk in chunks for r in chunk]
    return PRCurve.from_records(phis, records)


def write_sweep(curve: PRCurve, method: str, out_dir) -> None:
    """``sweep_<method>.csv`` (per phi per trial plus mean rows) and ``sweep_<method>.json``."""
    out_dir = Path(out_dir)
    cols = ["method", "phi", "trial", "tp", "fp", "tn", "fn", "recall", "precision", "fpr", "fnr"]
    with (out_dir / f"sweep_{method}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for phi, trial, m in curve.records:
            w.writerow([method, repr(phi), trial, m.tp, m.fp, m.tn, m.fn,
                        repr(m.recall), repr(m.precision), repr(m.fpr), repr(m.fnr)])
        for phi, r, p in zip(curve.phis, curve.recall, curve.precision):
            w.writerow([method, repr(phi), "mean", "", "", "", "", repr(r), repr(p), "", ""])
    with (out_dir / f"sweep_{method}.json").open("w") as fh:
        json.dump(curve.summary(method), fh, indent=2, sort_keys=True)
        fh.write("\n")
