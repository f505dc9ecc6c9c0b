"""JSON model files and run manifests.

A model file stores everything needed to reproduce in-sample predictions on
its own; out-of-sample prediction additionally reloads the training CSV
named in the file (its digest is checked).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Dataset
from .em import FitConfig, FitResult, SubsetModel
from .gem import GemConfig, candidate_neighbors, init_gem, select_edges
from .kernel_graph import gram

FORMAT_VERSION = 1


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def _ints(a) -> list:
    return [int(v) for v in np.asarray(a).ravel()]


def model_to_dict(method: str, fit, mask, cfg: FitConfig,
                  train_data: Optional[str] = None, train_digest: Optional[str] = None) -> dict:
    """Serialize a :class:`FitResult` (EM methods) or :class:`SubsetModel` (oracle)."""
    if isinstance(fit, FitResult):
        model = fit.model
        extra = {
            "trace": [r.to_dict() for r in fit.trace],
            "iterations": fit.iterations,
            "converged": fit.converged,
            "stop_reason": fit.stop_reason,
            "penalties": _floats(fit.gem_state.penalties),
        }
    elif isinstance(fit, SubsetModel):
        model = fit
        extra = {"trace": [], "iterations": 1, "converged": True, "stop_reason": "fixed_subset",
                 "penalties": None}
    else:
        raise TypeError(f"cannot serialize {type(fit).__name__}")
    return {
        "format_version": FORMAT_VERSION,
        "method": method,
        "config": cfg.to_dict(),
        "mask": _ints(np.asarray(mask, dtype=np.int8)),
        "subset": _ints(model.subset),
        "label_rows": _ints(model.subset[model.problem.rows]),
        "label_signs": _ints(model.problem.signs),
        "alphas": _floats(model.dual.alphas),
        "bias": float(model.dual.bias),
        "support": _ints(model.dual.support),
        "objective": float(model.dual.objective),
        "beta": float(model.problem.beta),
        "coef": _floats(model.coef),
        "train_decision": _floats(model.train_decision),
        "train_data": train_data,
        "train_sha256": train_digest,
        **extra,
    }


@dataclass(frozen=True)
class StoredModel:
    method: str
    config: FitConfig
    mask: np.ndarray
    subset: np.ndarray
    coef: np.ndarray
    bias: float
    train_decision: np.ndarray
    penalties: Optional[np.ndarray]
    train_data: Optional[str]
    train_sha256: Optional[str]
    raw: dict

    @classmethod
    def from_dict(cls, data: dict) -> "StoredModel":
        try:
            if data.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported model format {data.get('format_version')!r}")
            pen = data.get("penalties")
            return cls(
                method=data["method"],
                config=FitConfig.from_dict(data["config"]),
                mask=np.asarray(data["mask"], dtype=bool),
                subset=np.asarray(data["subset"], dtype=np.intp),
                coef=np.asarray(data["coef"], dtype=np.float64),
                bias=float(data["bias"]),
                train_decision=np.asarray(data["train_decision"], dtype=np.float64),
                penalties=None if pen is None else np.asarray(pen, dtype=np.float64),
                train_data=data.get("train_data"),
                train_sha256=data.get("train_sha256"),
                raw=data,
            )
        except KeyError as exc:
            raise ValueError(f"model file lacks field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "StoredModel":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def predict_in_sample(self) -> np.ndarray:
        pred = np.full(len(self.mask), -1, dtype=np.int8)
        pred[self.subset[self.train_decision > 0]] = 1
        return pred

    def predict(self, train: Dataset, X) -> np.ndarray:
        """Out-of-sample labels against the training data the model was fit on."""
        if self.penalties is None:
            raise ValueError("a fixed-subset model has no acceptance region for new points")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != train.p:
            raise ValueError(f"queries have {X.shape[1]} features, model expects {train.p}")
        if train.n != len(self.mask):
            raise ValueError("training data does not match the stored model")
        cfg = self.config
        state = init_gem(train.features, GemConfig(cfg.phi, cfg.k_gem, cfg.rho, cfg.metric,
                                                   cfg.candidate_factor))
        scores = select_edges(state.neighbors, state.base, self.penalties, cfg.k_gem).scores
        inside = ~self.mask
        threshold = scores[inside].max() if inside.any() else -np.inf
        nbrs, base = candidate_neighbors(train.features, X, n_candidates=state.neighbors.shape[1],
                                         metric=cfg.metric, exclude_self=False)
        anom = select_edges(nbrs, base, self.penalties, cfg.k_gem).scores > threshold
        pred = np.full(len(X), -1, dtype=np.int8)
        if anom.any():
            Kx = gram(X[anom], cfg.kernel, cfg.sigma, Y=train.features[self.subset])
            pred[np.flatnonzero(anom)[Kx @ self.coef + self.bias > 0]] = 1
        return pred
