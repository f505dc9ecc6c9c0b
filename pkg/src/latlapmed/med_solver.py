"""Laplacian-regularized maximum-margin dual with a log-barrier margin term.

The problem solved by :func:`solve_dual` is::

    maximize   sum(a) - 1/2 a'Qa + sum(log(1 - a/C))
    subject to sum(y * a) = 0,  a >= 0

with ``Q = Y J K (I + 2 beta L K)^-1 J' Y`` assembled by :func:`build_dual`
from a kernel block ``K`` and a graph Laplacian ``L`` on the same points.
The log barrier replaces the usual ``a <= C`` box, so every one-dimensional
restriction of the objective is smooth and strictly concave.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

from .dataset import LabelView

MAX_CONDITION = 1e12


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


class InfeasibleProblemError(SolverError):
    pass


class ConvergenceError(SolverError):
    """Raised when the pair sweeps stop before the KKT gap reaches ``tol``."""

    def __init__(self, message, alphas, kkt_residual, n_iter):
        super().__init__(message)
        self.alphas = alphas
        self.kkt_residual = kkt_residual
        self.n_iter = n_iter


@dataclass(frozen=True)
class DualProblem:
    Q: np.ndarray
    signs: np.ndarray
    C: float
    beta: float
    rows: np.ndarray
    n_sub: int
    lu: tuple
    condition: float

    @property
    def n_labeled(self) -> int:
        return len(self.signs)


@dataclass(frozen=True)
class DualSolution:
    alphas: np.ndarray
    bias: float
    objective: float
    kkt_residual: float
    support: np.ndarray
    n_iter: int = 0


def _condition_number(M, lu):
    anorm = np.linalg.norm(M, 1)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or rcond <= 0:
        return np.inf
    return 1.0 / rcond


def build_dual(K_sub, L_sub, labels: LabelView, C: float, beta: float) -> DualProblem:
    """Assemble the dual problem on an ``a``-point subset.

    ``labels`` must be expressed in subset coordinates (positions ``0..a-1``).
    """
    K = np.asarray(K_sub, dtype=np.float64)
    L = np.asarray(L_sub, dtype=np.float64)
    a = K.shape[0]
    if K.shape != (a, a) or L.shape != (a, a):
        raise ValueError(f"kernel {K.shape} and Laplacian {L.shape} must be matching square blocks")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    rows = np.asarray(labels.indices, dtype=np.intp)
    y = np.asarray(labels.signs, dtype=np.float64)
    if len(rows) and (rows.min() < 0 or rows.max() >= a):
        raise ValueError("a labeled point is absent from the subset")
    if len(rows) < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise InfeasibleProblemError("need at least one labeled point of each sign")

    M = np.eye(a) + 2.0 * beta * (L @ K)
    lu = lu_factor(M, check_finite=False)
    cond = _condition_number(M, lu[0])
    if cond > MAX_CONDITION:
        raise SingularSystemError(f"I + 2 beta L K is ill-conditioned (cond ~ {cond:.3g})", cond)

    # S = K M^-1 restricted to labeled rows/cols: S[r, r] = K[r, :] (M^-1)[:, r]
    E = np.zeros((a, len(rows)))
    E[rows, np.arange(len(rows))] = 1.0
    Minv_cols = lu_solve(lu, E, check_finite=False)
    S_rr = K[rows] @ Minv_cols
    Q = (y[:, None] * y[None, :]) * S_rr
    Q = 0.5 * (Q + Q.T)
    return DualProblem(Q, y.astype(np.int8), float(C), float(beta), rows, a, lu, cond)


def dual_objective(Q, alphas, C) -> float:
    a = np.asarray(alphas, dtype=np.float64)
    if np.any(a >= C):
        return -np.inf
    return float(a.sum() - 0.5 * a @ Q @ a + np.log1p(-a / C).sum())


def _pair_step(alpha, i, j, yi, yj, gap, q, C):
    """Maximize the objective along d = y_i e_i - y_j e_j; returns (t, zeroed index or -1)."""
    idx = (i, j)
    d = (yi, -yj)
    a0 = (alpha[i], alpha[j])
    r0 = (1.0 / (C - a0[0]), 1.0 / (C - a0[1]))

    t_zero, zero_k, t_bar = np.inf, -1, np.inf
    for k in range(2):
        if d[k] < 0:
            if a0[k] < t_zero:
                t_zero, zero_k = a0[k], idx[k]
        else:
            t_bar = min(t_bar, C - a0[k])

    def deriv(t):
        s = gap - t * q
        for k in range(2):
            s -= d[k] * (1.0 / (C - a0[k] - t * d[k]) - r0[k])
        return s

    def curv(t):
        c = q
        for k in range(2):
            c += 1.0 / (C - a0[k] - t * d[k]) ** 2
        return c

    if t_zero < t_bar and deriv(t_zero) >= 0:
        return t_zero, zero_k

    lo, hi = 0.0, min(t_zero, t_bar)
    t = 0.0
    for _ in range(200):
        g = deriv(t)
        if g > 0:
            lo = t
        else:
            hi = t
        if abs(g) <= 1e-15 * max(1.0, gap) or hi - lo <= 1e-16 * max(1.0, hi):
            break
        tn = t + g / curv(t)
        if not lo < tn < hi:
            tn = 0.5 * (lo + hi)
        t = tn
    return t, -1


def solve_dual(p: DualProblem, tol: float = 1e-8, max_iter: int = 200_000) -> DualSolution:
    """Pairwise coordinate ascent on the barrier dual.

    Each step picks the most violating pair with second-order selection and
    solves the one-dimensional restriction exactly (safeguarded Newton). The
    returned ``kkt_residual`` is the gap ``max F_up - min F_low`` with
    ``F = y * grad``; it is zero exactly at a KKT point.
    """
    Q = p.Q
    C = p.C
    y = p.signs.astype(np.float64)
    n = len(y)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise InfeasibleProblemError("all labels have the same sign; no feasible nonzero solution")
    alpha = np.full(n, min(0.1, C / 100.0))
    alpha -= (y @ alpha) / n * y
    Qa = Q @ alpha
    diag = np.diag(Q).copy()

    it = 0
    gap = np.inf
    while True:
        if it % 1000 == 0:
            Qa = Q @ alpha
        G = 1.0 - Qa - 1.0 / (C - alpha)
        F = y * G
        pos = alpha > 0
        up = (y > 0) | pos
        low = (y < 0) | pos
        F_up = np.where(up, F, -np.inf)
        F_low = np.where(low, F, np.inf)
        i = int(np.argmax(F_up))
        gap = F_up[i] - F_low.min()
        if gap <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"dual solver stopped after {it} pair updates with KKT gap {gap:.3e}",
                alphas=alpha.copy(), kkt_residual=float(gap), n_iter=it,
            )
        # second-order choice of the partner j
        diffs = F[i] - F_low
        curv = diag[i] + diag - 2.0 * y[i] * y * Q[i] + 1.0 / (C - alpha[i]) ** 2 + 1.0 / (C - alpha) ** 2
        score = np.where(diffs > 0, diffs * diffs / np.maximum(curv, 1e-300), -np.inf)
        score[i] = -np.inf
        j = int(np.argmax(score))
        yi, yj = y[i], y[j]
        q = max(diag[i] + diag[j] - 2.0 * yi * yj * Q[i, j], 0.0)
        t, zeroed = _pair_step(alpha, i, j, yi, yj, F[i] - F[j], q, C)
        alpha[i] += yi * t
        alpha[j] -= yj * t
        if zeroed >= 0:
            alpha[zeroed] = 0.0
        np.maximum(alpha, 0.0, out=alpha)
        Qa += t * (yi * Q[:, i] - yj * Q[:, j])
        it += 1

    f = y * (Q @ alpha)
    support = np.flatnonzero(alpha > 1e-6 * C)
    b = fit_bias(f[support], y[support])
    return DualSolution(
        alphas=alpha, bias=b, objective=dual_objective(Q, alpha, C),
        kkt_residual=float(max(gap, 0.0)), support=support, n_iter=it,
    )


def fit_bias(decision_at_support, signs_at_support) -> float:
    """Median of the residuals ``y_s - f_s`` (mean of the middle pair for even counts)."""
    f = np.asarray(decision_at_support, dtype=np.float64)
    y = np.asarray(signs_at_support, dtype=np.float64)
    if f.shape != y.shape:
        raise ValueError("decision values and signs differ in length")
    if f.size == 0:
        raise SolverError("empty support set; bias is undefined")
    return float(np.median(y - f))


def dual_coef(p: DualProblem, sol: DualSolution) -> np.ndarray:
    """``M^-1 J' Y alpha`` in subset coordinates, so f(x) = k(x, X_sub) @ coef + b."""
    v = np.zeros(p.n_sub)
    v[p.rows] = p.signs * sol.alphas
    return lu_solve(p.lu, v, check_finite=False)


def decision_values(K_cross, p: DualProblem, sol: DualSolution) -> np.ndarray:
    K_cross = np.atleast_2d(np.asarray(K_cross, dtype=np.float64))
    if K_cross.shape[1] != p.n_sub:
        raise ValueError(f"cross-kernel has {K_cross.shape[1]} columns, expected {p.n_sub}")
    return K_cross @ dual_coef(p, sol) + sol.bias
