"""Geometric entropy minimization with a decision-boundary-aware edge metric.

The acceptance region is estimated with the greedy K-point kNN graph: each
point is scored by the sum of its ``k_gem`` shortest (penalized) edges and the
lowest-scoring ``n - ceil(phi * n)`` points are accepted as nominal.

Base distances are computed and sorted once in :func:`init_gem`; later calls
only add penalties to a fixed candidate list and re-rank.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import LabelView
from .kernel_graph import METRICS, GraphError, _check_nonzero_rows

_BLOCK_BYTES = 64 * 2**20


def ceil_count(frac: float, n: int) -> int:
    """``ceil(frac * n)`` guarded against products like 0.05 * 7000 = 350.00000000000006."""
    return int(math.ceil(frac * n - 1e-9))


@dataclass(frozen=True)
class GemConfig:
    phi: float = 0.05
    k_gem: int = 10
    rho: float = 1.0
    metric: str = "euclidean"
    candidate_factor: int = 1

    def validate(self, n: Optional[int] = None):
        if not 0 < self.phi < 1:
            raise ValueError(f"phi must lie in (0, 1), got {self.phi}")
        if self.k_gem < 1:
            raise ValueError(f"k_gem must be >= 1, got {self.k_gem}")
        if n is not None and self.k_gem >= n:
            raise ValueError(f"k_gem={self.k_gem} must be smaller than n={n}")
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.candidate_factor < 1:
            raise ValueError("candidate_factor must be >= 1")
        return self


@dataclass(frozen=True)
class GemState:
    """Sorted candidate edges plus the latest penalties, scores and mask.

    ``neighbors``/``base`` are read-only and sorted ascending by base distance
    (ties by index). ``penalties[j]`` is the amount added to every edge ending
    at ``j``.
    """

    neighbors: np.ndarray
    base: np.ndarray
    k_gem: int
    metric: str
    penalties: np.ndarray
    anomaly_mask: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class PenalizedEdges:
    neighbors: np.ndarray
    lengths: np.ndarray
    penalties: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        return self.lengths.sum(axis=1)


def _sorted_candidates(D: np.ndarray, c: int):
    """The ``c`` smallest entries per row of ``D`` in (value, index) order."""
    part = np.argpartition(D, c - 1, axis=1)[:, :c]
    vals = np.take_along_axis(D, part, axis=1)
    # argpartition picks arbitrarily among ties straddling position c; redo those rows exactly
    thr = vals.max(axis=1)
    ambiguous = np.flatnonzero((D <= thr[:, None]).sum(axis=1) > c)
    for r in ambiguous:
        part[r] = np.argsort(D[r], kind="stable")[:c]
    vals = np.take_along_axis(D, part, axis=1)
    order = np.lexsort((part, vals), axis=1)
    return np.take_along_axis(part, order, axis=1), np.take_along_axis(vals, order, axis=1)


def candidate_neighbors(X, Q=None, n_candidates: int = 40, metric: str = "euclidean",
                        exclude_self: bool = True):
    """Nearest ``n_candidates`` rows of ``X`` for every row of ``Q`` (default ``X``).

    Computed in row blocks so the full distance matrix is never held in memory.
    """
    X = np.asarray(X, dtype=np.float64)
    Q = X if Q is None else np.asarray(Q, dtype=np.float64)
    if metric == "cosine":
        _check_nonzero_rows(X)
        _check_nonzero_rows(Q, "queries")
    n = X.shape[0]
    m = Q.shape[0]
    block = max(1, min(m, _BLOCK_BYTES // (8 * n)))
    nbrs = np.empty((m, n_candidates), dtype=np.intp)
    dist = np.empty((m, n_candidates))
    for start in range(0, m, block):
        stop = min(m, start + block)
        D = cdist(Q[start:stop], X, metric=metric)
        if metric == "cosine":
            np.maximum(D, 0.0, out=D)
        if exclude_self:
            rows = np.arange(stop - start)
            D[rows, rows + start] = np.inf
        nbrs[start:stop], dist[start:stop] = _sorted_candidates(D, n_candidates)
    return nbrs, dist


def init_gem(X, cfg: GemConfig) -> GemState:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    cfg.validate(n)
    c = min(n - 1, cfg.candidate_factor * cfg.k_gem)
    nbrs, base = candidate_neighbors(X, n_candidates=c, metric=cfg.metric)
    nbrs.flags.writeable = False
    base.flags.writeable = False
    return GemState(nbrs, base, cfg.k_gem, cfg.metric, penalties=np.zeros(n))


def edge_penalties(d_hat, labels: LabelView, rho: float) -> np.ndarray:
    """Per-endpoint additive penalty: ``d_hat[j]`` where ``d_hat[j] > rho`` or
    ``j`` is labeled +1, else 0. The signed value is used as is."""
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if not np.all(np.isfinite(d_hat)):
        raise ValueError("decision values must be finite")
    fire = d_hat > rho
    fire[labels.positive] = True
    return np.where(fire, d_hat, 0.0)


def penalized_edges(state: GemState, d_hat, labels: LabelView, rho: float) -> PenalizedEdges:
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if d_hat.shape != (state.n,):
        raise ValueError(f"d_hat has length {d_hat.shape}, expected ({state.n},)")
    pen = edge_penalties(d_hat, labels, rho)
    return select_edges(state.neighbors, state.base, pen, state.k_gem)


def select_edges(neighbors, base, penalties, k) -> PenalizedEdges:
    lengths = base + penalties[neighbors]
    pick = np.argsort(lengths, axis=1, kind="stable")[:, :k]
    return PenalizedEdges(
        neighbors=np.take_along_axis(neighbors, pick, axis=1),
        lengths=np.take_along_axis(lengths, pick, axis=1),
        penalties=penalties,
    )


def entropy_set(state: GemState, edges: PenalizedEdges, phi: float, forced=()) -> np.ndarray:
    """Anomaly mask: points outside the ``n - ceil(phi n)`` lowest-scoring ones,
    plus every index in ``forced``."""
    n = state.n
    if not 0 < phi < 1:
        raise ValueError(f"phi must lie in (0, 1), got {phi}")
    n_anom = ceil_count(phi, n)
    order = np.argsort(edges.scores, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[n - n_anom:]] = True
    mask[np.asarray(forced, dtype=np.intp)] = True
    return mask


def estimate(state: GemState, d_hat, labels: LabelView, rho: float, phi: float) -> GemState:
    """One E-step: penalize, score, threshold. Returns an updated state."""
    edges = penalized_edges(state, d_hat, labels, rho)
    mask = entropy_set(state, edges, phi, forced=labels.indices)
    return replace(state, penalties=edges.penalties, anomaly_mask=mask, scores=edges.scores)


def acceptance_threshold(state: GemState) -> float:
    """Largest score inside the estimated acceptance region."""
    if state.anomaly_mask is None:
        raise ValueError("state has no anomaly mask yet")
    inside = ~state.anomaly_mask
    if not inside.any():
        return -np.inf
    return float(state.scores[inside].max())


def score_queries(state: GemState, X_train, X_query) -> np.ndarray:
    """Scores of new points against the training graph under the current penalties."""
    c = min(state.neighbors.shape[1], np.asarray(X_train).shape[0])
    nbrs, base = candidate_neighbors(X_train, X_query, n_candidates=c, metric=state.metric,
                                     exclude_self=False)
    return select_edges(nbrs, base, state.penalties, state.k_gem).scores


__all__ = [
    "GemConfig", "GemState", "PenalizedEdges", "GraphError", "ceil_count", "init_gem",
    "edge_penalties", "penalized_edges", "entropy_set", "estimate", "acceptance_threshold",
    "score_queries", "candidate_neighbors",
]
