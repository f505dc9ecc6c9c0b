"""Partially labeled datasets and their CSV representation.

Labels are stored as an ``int8`` vector with ``+1`` (high utility), ``-1``
(low utility) and ``0`` (unobserved). Ground-truth columns are optional and
only ever used for evaluation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

UNOBSERVED = 0

TRUTH_ANOMALY_COLUMN = "truth_anomaly"
TRUTH_UTILITY_COLUMN = "truth_utility"


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class LabelView:
    """Observed labels as index/sign lookups (never as expansion matrices)."""

    indices: np.ndarray
    signs: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def positive(self) -> np.ndarray:
        return self.indices[self.signs > 0]

    def sign_lookup(self, n: int) -> np.ndarray:
        """Length-``n`` vector holding the sign at labeled points and 0 elsewhere."""
        out = np.zeros(n, dtype=np.int8)
        out[self.indices] = self.signs
        return out


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    truth_anomaly: Optional[np.ndarray] = None
    truth_utility: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D array, got shape {X.shape}")
        bad = np.argwhere(~np.isfinite(X))
        if len(bad):
            r, c = bad[0]
            raise DataError(f"non-finite feature value at row {r}, column {c}", row=int(r), column=int(c))
        n = X.shape[0]
        y = _as_partial_labels(self.labels, n)
        ta = None
        if self.truth_anomaly is not None:
            ta = np.asarray(self.truth_anomaly).astype(bool)
            if ta.shape != (n,):
                raise DataError("truth_anomaly length does not match features")
            orphan = np.flatnonzero((y != UNOBSERVED) & ~ta)
            if len(orphan):
                raise DataError(
                    f"labeled point {orphan[0]} is not a ground-truth anomaly", row=int(orphan[0])
                )
        tu = None
        if self.truth_utility is not None:
            tu = np.asarray(self.truth_utility).astype(np.int8)
            if tu.shape != (n,) or not np.all(np.isin(tu, (-1, 1))):
                raise DataError("truth_utility must be a length-n vector of +1/-1")
        names = self.feature_names
        if names is None:
            names = tuple(f"x{j}" for j in range(X.shape[1]))
        elif len(names) != X.shape[1]:
            raise DataError("feature_names length does not match features")
        for arr in (X, y, ta, tu):
            if arr is not None:
                arr.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "truth_anomaly", ta)
        object.__setattr__(self, "truth_utility", tu)
        object.__setattr__(self, "feature_names", tuple(names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_labeled(self) -> int:
        return int(np.count_nonzero(self.labels))

    @property
    def has_truth(self) -> bool:
        return self.truth_anomaly is not None and self.truth_utility is not None


def _as_partial_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (n,):
        raise DataError(f"labels must have length {n}, got shape {y.shape}")
    y = np.where(np.isnan(y), 0.0, y)
    if not np.all(np.isin(y, (-1.0, 0.0, 1.0))):
        bad = int(np.flatnonzero(~np.isin(y, (-1.0, 0.0, 1.0)))[0])
        raise DataError(f"label at row {bad} is not one of +1, -1 or unobserved", row=bad)
    return y.astype(np.int8)


def label_view(d: Dataset) -> LabelView:
    idx = np.flatnonzero(d.labels)
    return LabelView(indices=idx, signs=d.labels[idx].astype(np.int8))


def _parse_float(cell, row, column):
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: cannot parse {cell!r} as a number",
                        row=row, column=column) from None
    if not math.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {cell!r}",
                        row=row, column=column)
    return value


def load_csv(path, label_column: str = "label",
             truth_columns: Optional[Sequence[str]] = None,
             require_labels: bool = True) -> Dataset:
    """Read a dataset from a header-row CSV file.

    Every column other than the label column and the truth columns is treated
    as a numeric feature. ``truth_columns`` is ``(anomaly_column, utility_column)``;
    when omitted, columns named ``truth_anomaly``/``truth_utility`` are picked
    up if present. With ``require_labels=False`` a missing label column means
    every point is unobserved. Rows are numbered from 0 (the first data row)
    in errors.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    if label_column not in header and not require_labels:
        label_column = None
    elif label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found", column=label_column)
    if truth_columns is None:
        ta_col = TRUTH_ANOMALY_COLUMN if TRUTH_ANOMALY_COLUMN in header else None
        tu_col = TRUTH_UTILITY_COLUMN if TRUTH_UTILITY_COLUMN in header else None
    else:
        ta_col, tu_col = truth_columns
        for c in (ta_col, tu_col):
            if c is not None and c not in header:
                raise DataError(f"{path}: truth column {c!r} not found", column=c)

    reserved = {label_column, ta_col, tu_col}
    feat_cols = [j for j, h in enumerate(header) if h not in reserved]
    if not feat_cols:
        raise DataError(f"{path}: no feature columns")
    li = header.index(label_column) if label_column else None
    tai = header.index(ta_col) if ta_col else None
    tui = header.index(tu_col) if tu_col else None

    n = len(rows)
    X = np.empty((n, len(feat_cols)))
    y = np.zeros(n, dtype=np.int8)
    ta = np.zeros(n, dtype=bool) if tai is not None else None
    tu = np.zeros(n, dtype=np.int8) if tui is not None else None
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} cells, got {len(row)}", row=r)
        for k, j in enumerate(feat_cols):
            X[r, k] = _parse_float(row[j], r, header[j])
        cell = row[li].strip() if li is not None else ""
        if cell == "":
            y[r] = UNOBSERVED
        elif cell in ("1", "+1", "1.0"):
            y[r] = 1
        elif cell in ("-1", "-1.0"):
            y[r] = -1
        else:
            raise DataError(f"row {r}: label {cell!r} is not 1, -1 or empty", row=r, column=label_column)
        if tai is not None:
            cell = row[tai].strip()
            if cell not in ("0", "1"):
                raise DataError(f"row {r}: {ta_col} must be 0 or 1, got {cell!r}", row=r, column=ta_col)
            ta[r] = cell == "1"
        if tui is not None:
            cell = row[tui].strip()
            if cell not in ("1", "-1"):
                raise DataError(f"row {r}: {tu_col} must be 1 or -1, got {cell!r}", row=r, column=tu_col)
            tu[r] = int(cell)

    return Dataset(X, y, truth_anomaly=ta, truth_utility=tu,
                   feature_names=tuple(header[j] for j in feat_cols))


def write_csv(d: Dataset, path, label_column: str = "label") -> None:
    """Write ``d`` so that :func:`load_csv` reproduces it exactly.

    Floats are written with ``repr`` (shortest round-tripping form).
    """
    header = list(d.feature_names) + [label_column]
    if d.truth_anomaly is not None:
        header.append(TRUTH_ANOMALY_COLUMN)
    if d.truth_utility is not None:
        header.append(TRUTH_UTILITY_COLUMN)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            row = [repr(float(v)) for v in d.features[i]]
            row.append("" if d.labels[i] == UNOBSERVED else str(int(d.labels[i])))
            if d.truth_anomaly is not None:
                row.append("1" if d.truth_anomaly[i] else "0")
            if d.truth_utility is not None:
                row.append(str(int(d.truth_utility[i])))
            w.writerow(row)
