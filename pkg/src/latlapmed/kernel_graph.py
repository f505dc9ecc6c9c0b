"""Distances, kernel Gram matrices and normalized kNN graph Laplacians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

METRICS = ("euclidean", "cosine")
KERNELS = ("rbf", "cosine")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    kind: str
    sigma: float | None = None


@dataclass(frozen=True)
class LaplacianMatrix:
    values: np.ndarray
    neighbors: int
    heat_scale: float
    clamped: bool = False


def _check_nonzero_rows(X, what="X"):
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise GraphError(f"cosine metric undefined for all-zero row {zero[0]} of {what}")
    return norms


def pairwise_distances(X, metric: str = "euclidean", Y=None) -> np.ndarray:
    """Dense distance matrix between rows of ``X`` (and ``Y`` if given).

    Cosine distance is ``1 - cos(x, y)``, clipped at 0.
    """
    X = np.asarray(X, dtype=np.float64)
    same = Y is None
    Y = X if same else np.asarray(Y, dtype=np.float64)
    if metric not in METRICS:
        raise GraphError(f"unknown metric {metric!r}")
    if same and X.shape[0] < 2:
        raise GraphError("need at least 2 points")
    if metric == "cosine":
        _check_nonzero_rows(X)
        if not same:
            _check_nonzero_rows(Y, "Y")
    D = cdist(X, Y, metric=metric)
    if metric == "cosine":
        np.maximum(D, 0.0, out=D)
    if same:
        np.fill_diagonal(D, 0.0)
    return D


def gram(X, kind: str = "rbf", sigma: float = 1.0, Y=None):
    """Kernel matrix. Returns a :class:`KernelMatrix` for ``Y=None`` and a
    plain cross-kernel block otherwise."""
    if kind not in KERNELS:
        raise GraphError(f"unknown kernel {kind!r}")
    X = np.asarray(X, dtype=np.float64)
    Z = X if Y is None else np.asarray(Y, dtype=np.float64)
    if kind == "rbf":
        if not sigma > 0:
            raise GraphError(f"rbf bandwidth sigma must be positive, got {sigma}")
        V = np.exp(-cdist(X, Z, metric="sqeuclidean") / (2.0 * sigma * sigma))
    else:
        nx = _check_nonzero_rows(X)
        nz = nx if Y is None else _check_nonzero_rows(Z, "Y")
        V = (X @ Z.T) / np.outer(nx, nz)
        np.clip(V, -1.0, 1.0, out=V)
    if Y is not None:
        return V
    V = 0.5 * (V + V.T)
    np.fill_diagonal(V, 1.0)
    return KernelMatrix(V, kind, sigma if kind == "rbf" else None)


def knn_indices(D: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points per row of a square distance
    matrix, ties broken by ascending index."""
    D = np.array(D, dtype=np.float64)
    np.fill_diagonal(D, np.inf)
    return np.argsort(D, axis=1, kind="stable")[:, :k]


def heat_kernel_weights(X, k: int, tau: float, metric: str = "euclidean") -> np.ndarray:
    """Symmetric kNN weight matrix with ``exp(-d^2 / tau)`` on union-symmetrized edges."""
    D = pairwise_distances(X, metric)
    m = D.shape[0]
    nbrs = knn_indices(D, k)
    rows = np.repeat(np.arange(m), k)
    cols = nbrs.ravel()
    A = np.zeros((m, m), dtype=bool)
    A[rows, cols] = True
    A |= A.T
    W = np.where(A, np.exp(-(D * D) / tau), 0.0)
    np.fill_diagonal(W, 0.0)
    return W


def laplacian_from_weights(W) -> np.ndarray:
    """``I - D^-1/2 W D^-1/2``; a zero-degree node keeps a lone 1 on its diagonal."""
    W = np.asarray(W, dtype=np.float64)
    deg = W.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    L = -(inv_sqrt[:, None] * W * inv_sqrt[None, :])
    L = 0.5 * (L + L.T)
    np.fill_diagonal(L, 1.0)
    return L


def normalized_laplacian(X, k_lap: int, tau: float, metric: str = "euclidean",
                         clamp: bool = False) -> LaplacianMatrix:
    """Normalized heat-kernel kNN graph Laplacian of the rows of ``X``.

    With ``clamp=True`` a neighbor count of ``m`` or more is reduced to
    ``m - 1`` instead of raising; the result records that it was clamped.
    """
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    if m < 2:
        raise GraphError("a graph Laplacian needs at least 2 points")
    if not tau > 0:
        raise GraphError(f"heat scale tau must be positive, got {tau}")
    clamped = False
    if k_lap < 1:
        raise GraphError(f"k_lap must be >= 1, got {k_lap}")
    if k_lap > m - 1:
        if not clamp:
            raise GraphError(f"k_lap={k_lap} out of range for {m} points")
        k_lap, clamped = m - 1, True
    W = heat_kernel_weights(X, k_lap, tau, metric)
    return LaplacianMatrix(laplacian_from_weights(W), k_lap, float(tau), clamped)


def principal_submatrix(M, idx) -> np.ndarray:
    M = np.asarray(M)
    idx = np.asarray(idx, dtype=np.intp)
    n = M.shape[0]
    if M.ndim != 2 or M.shape[1] != n:
        raise GraphError("principal_submatrix needs a square matrix")
    if idx.ndim != 1 or len(np.unique(idx)) != len(idx):
        raise GraphError("indices must be a list of unique positions")
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise GraphError(f"index out of range for a {n}x{n} matrix")
    return M[np.ix_(idx, idx)]
