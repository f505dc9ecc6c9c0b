"""Synthetic benchmark: folded multivariate t data with component utility scores.

Randomness is split into named substreams of one root seed so the sample and
the label reveal can be varied independently; trial ``t`` of an experiment
uses root seed ``seed + t``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset
from .gem import ceil_count

SIM_STREAM = 0
REVEAL_STREAM = 1


def substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass(frozen=True)
class SimConfig:
    n: int = 7000
    p: int = 3
    df: float = 30.0
    phi_true: float = 0.05
    top_utility_frac: float = 0.25
    label_frac: float = 0.30
    n_components: int = 3
    component_size_range: Optional[tuple] = None
    seed: int = 0

    def size_range(self):
        if self.component_size_range is None:
            return 1, math.ceil(self.p / 2)
        lo, hi = self.component_size_range
        return int(lo), int(hi)

    def validate(self) -> "SimConfig":
        if self.n < 2 or self.p < 1:
            raise ValueError("need n >= 2 and p >= 1")
        for name in ("phi_true", "top_utility_frac", "label_frac"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.df > 2:
            raise ValueError(f"df must exceed 2, got {self.df}")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        lo, hi = self.size_range()
        if not 1 <= lo <= hi <= self.p - 1:
            raise ValueError(
                f"component sizes [{lo}, {hi}] infeasible for p={self.p}; need 1 <= lo <= hi <= p-1"
            )
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sim config field(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        if data.get("component_size_range") is not None:
            data["component_size_range"] = tuple(data["component_size_range"])
        return cls(**data).validate()

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["component_size_range"] is not None:
            out["component_size_range"] = list(out["component_size_range"])
        return out


def random_scale_matrix(p: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.standard_normal((p, p))
    return A @ A.T / p + 0.1 * np.eye(p)


def sample_t(n: int, scale: np.ndarray, df: float, rng: np.random.Generator,
             fold: bool = True) -> np.ndarray:
    """Multivariate t with location 0; ``fold`` takes the elementwise absolute value."""
    p = scale.shape[0]
    z = rng.multivariate_normal(np.zeros(p), scale, size=n, method="cholesky")
    u = rng.chisquare(df, size=n)
    x = z * np.sqrt(df / u)[:, None]
    return np.abs(x) if fold else x


def random_components(p: int, n_components: int, size_range, rng) -> list:
    lo, hi = size_range
    comps = []
    for _ in range(n_components):
        size = int(rng.integers(lo, hi + 1))
        comps.append(np.sort(rng.choice(p, size=size, replace=False)))
    return comps


def score_points(X, components: Sequence) -> np.ndarray:
    """max over components of (mean inside the component - mean outside it)."""
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    if not components:
        raise ValueError("need at least one component")
    best = np.full(X.shape[0], -np.inf)
    for comp in components:
        comp = np.unique(np.asarray(comp, dtype=np.intp))
        if len(comp) == 0 or len(comp) >= p:
            raise ValueError(f"component {comp.tolist()} must be a nonempty proper subset of columns")
        inside = np.zeros(p, dtype=bool)
        inside[comp] = True
        s = X[:, inside].mean(axis=1) - X[:, ~inside].mean(axis=1)
        np.maximum(best, s, out=best)
    return best


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def generate(cfg: SimConfig) -> Dataset:
    """Draw one benchmark dataset with ground truth and partially revealed labels."""
    cfg.validate()
    rng = substream(cfg.seed, SIM_STREAM)
    scale = random_scale_matrix(cfg.p, rng)
    X = sample_t(cfg.n, scale, cfg.df, rng)
    comps = random_components(cfg.p, cfg.n_components, cfg.size_range(), rng)
    score = score_points(X, comps)

    order = np.lexsort((np.arange(cfg.n), -score))  # descending score, ties by index
    n_anom = ceil_count(cfg.phi_true, cfg.n)
    n_high = ceil_count(cfg.top_utility_frac, n_anom)
    anomalous = np.zeros(cfg.n, dtype=bool)
    anomalous[order[:n_anom]] = True
    utility = np.full(cfg.n, -1, dtype=np.int8)
    high = order[:n_high]
    low = order[n_high:n_anom]
    utility[high] = 1

    n_reveal = _round_half_up(cfg.label_frac * n_high)
    reveal = substream(cfg.seed, REVEAL_STREAM)
    labels = np.zeros(cfg.n, dtype=np.int8)
    labels[reveal.choice(high, size=n_reveal, replace=False)] = 1
    labels[reveal.choice(low, size=min(n_reveal, len(low)), replace=False)] = -1

    return Dataset(X, labels, truth_anomaly=anomalous, truth_utility=utility,
                   feature_names=tuple(f"x{j}" for j in range(cfg.p)))
