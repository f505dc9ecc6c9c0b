"""EM fitting of the latent anomaly mask and the utility classifier.

E-step: re-estimate the anomaly mask with GEM, penalizing edges that end at
points the current classifier places beyond the margin (or that carry a +1
label). M-step: refit the Laplacian-regularized dual on the points currently
marked anomalous. Nominal points are always predicted low utility.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Union

import numpy as np

from .dataset import Dataset, LabelView, label_view
from .gem import GemConfig, GemState, acceptance_threshold, estimate, init_gem, score_queries
from .kernel_graph import KERNELS, METRICS, GraphError, gram, normalized_laplacian
from .med_solver import (
    DualProblem, DualSolution, SolverError, build_dual, dual_coef, solve_dual,
)

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    """A numerical failure inside the EM loop, annotated with the iteration."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class FitConfig:
    phi: float = 0.05
    rho: float = 1.0
    k_gem: int = 10
    C: float = 50.0
    beta: Union[float, str] = "auto"
    kernel: str = "rbf"
    sigma: float = 1.0
    k_lap: int = 50
    tau: float = 100.0
    metric: str = "euclidean"
    max_em_iters: int = 30
    em_tol: float = 0.0
    candidate_factor: int = 1
    solver_tol: float = 1e-8
    solver_max_iter: int = 200_000

    def validate(self) -> "FitConfig":
        if not 0 < self.phi < 1:
            raise ValueError(f"phi must lie in (0, 1), got {self.phi}")
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")
        for name in ("k_gem", "k_lap", "max_em_iters", "candidate_factor", "solver_max_iter"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("C", "sigma", "tau", "solver_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.em_tol < 0:
            raise ValueError("em_tol must be non-negative")
        if self.beta != "auto" and not (isinstance(self.beta, (int, float)) and self.beta >= 0):
            raise ValueError(f"beta must be 'auto' or a non-negative number, got {self.beta!r}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        return self

    def beta_for(self, n_labeled: int, n_anomalous: int) -> float:
        """Smoothness weight; ``'auto'`` means ``10 C l / a^2``."""
        if self.beta == "auto":
            return 10.0 * self.C * n_labeled / float(n_anomalous) ** 2
        return float(self.beta)

    def gem_config(self) -> GemConfig:
        return GemConfig(self.phi, self.k_gem, self.rho, self.metric, self.candidate_factor)

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown fit config field(s): {', '.join(sorted(unknown))}")
        return cls(**data).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SubsetModel:
    """M-step output: the dual solution on the anomalous subset and what is
    needed to evaluate its decision function anywhere."""

    subset: np.ndarray
    X_sub: np.ndarray
    problem: DualProblem
    dual: DualSolution
    coef: np.ndarray
    train_decision: np.ndarray
    kernel: str
    sigma: float
    k_lap_used: int
    laplacian_clamped: bool

    @property
    def beta(self) -> float:
        return self.problem.beta

    def decision(self, X) -> np.ndarray:
        Kx = gram(np.atleast_2d(X), self.kernel, self.sigma, Y=self.X_sub)
        return Kx @ self.coef + self.dual.bias


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    n_anomalous: int
    n_changed: int
    beta: float
    k_lap_used: int
    kkt_residual: float
    solver_iters: int
    warnings: tuple = ()
    tp: Optional[int] = None
    fp: Optional[int] = None
    tn: Optional[int] = None
    fn: Optional[int] = None
    e_step_seconds: float = field(default=0.0, compare=False)
    m_step_seconds: float = field(default=0.0, compare=False)

    def to_dict(self, timings: bool = False) -> dict:
        out = asdict(self)
        out["warnings"] = list(self.warnings)
        if not timings:
            out.pop("e_step_seconds")
            out.pop("m_step_seconds")
        return out


@dataclass(frozen=True)
class FitResult:
    anomaly_mask: np.ndarray
    dual: DualSolution
    model: SubsetModel
    trace: tuple
    iterations: int
    converged: bool
    stop_reason: str
    gem_state: GemState
    X_train: np.ndarray = field(repr=False)
    labels: LabelView = field(repr=False)
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def bias(self) -> float:
        return self.dual.bias


def _check_labels(labels: LabelView):
    if len(labels) < 2 or not (np.any(labels.signs > 0) and np.any(labels.signs < 0)):
        raise ValueError("fitting needs at least one observed label of each sign")


def _subset_labels(subset: np.ndarray, labels: LabelView) -> LabelView:
    pos = np.searchsorted(subset, labels.indices)
    pos_ok = pos < len(subset)
    if not np.all(pos_ok) or not np.array_equal(subset[np.minimum(pos, len(subset) - 1)], labels.indices):
        raise ValueError("every labeled point must belong to the subset")
    return LabelView(pos.astype(np.intp), labels.signs)


def m_step(X, mask, labels: LabelView, cfg: FitConfig) -> SubsetModel:
    """Fit the dual on the points where ``mask`` is true."""
    subset = np.flatnonzero(mask)
    X_sub = np.asarray(X, dtype=np.float64)[subset]
    sub_labels = _subset_labels(subset, labels)
    a = len(subset)
    K = gram(X_sub, cfg.kernel, cfg.sigma).values
    lap = normalized_laplacian(X_sub, cfg.k_lap, cfg.tau, cfg.metric, clamp=True)
    beta = cfg.beta_for(len(labels), a)
    prob = build_dual(K, lap.values, sub_labels, cfg.C, beta)
    sol = solve_dual(prob, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    coef = dual_coef(prob, sol)
    return SubsetModel(
        subset=subset, X_sub=X_sub, problem=prob, dual=sol, coef=coef,
        train_decision=K @ coef + sol.bias, kernel=cfg.kernel, sigma=cfg.sigma,
        k_lap_used=lap.neighbors, laplacian_clamped=lap.clamped,
    )


def in_sample_predictions(mask, model: SubsetModel) -> np.ndarray:
    """+1 only for anomalous points with a strictly positive decision value."""
    pred = np.full(len(mask), -1, dtype=np.int8)
    pred[model.subset[model.train_decision > 0]] = 1
    return pred


def _confusion_counts(pred, truth):
    pos_p, pos_t = pred > 0, truth > 0
    return (int(np.sum(pos_p & pos_t)), int(np.sum(pos_p & ~pos_t)),
            int(np.sum(~pos_p & ~pos_t)), int(np.sum(~pos_p & pos_t)))


def fit_latlapmed(d: Dataset, cfg: FitConfig = FitConfig(),
                  gem_state: Optional[GemState] = None) -> FitResult:
    """Alternate GEM E-steps and dual M-steps until the anomaly mask settles.

    The first E-step runs with all-zero decision values, so a one-iteration
    fit is exactly GEM followed by a single LapMED fit. ``gem_state`` may be
    supplied to reuse the sorted neighbor lists across fits on the same data.
    """
    cfg.validate()
    X = d.features
    n = d.n
    labels = label_view(d)
    _check_labels(labels)
    if gem_state is None:
        gem_state = init_gem(X, cfg.gem_config())
    elif gem_state.n != n or gem_state.k_gem != cfg.k_gem or gem_state.metric != cfg.metric:
        raise ValueError("supplied GEM state does not match the data/config")

    d_hat = np.zeros(n)
    trace = []
    seen = {}
    best = None
    current = None
    prev_mask = None
    small_streak = 0
    converged, stop_reason = False, "max_iter"
    state = gem_state

    for it in range(1, cfg.max_em_iters + 1):
        t0 = time.perf_counter()
        state = estimate(state, d_hat, labels, cfg.rho, cfg.phi)
        mask = state.anomaly_mask
        t1 = time.perf_counter()
        key = mask.tobytes()
        if prev_mask is not None:
            n_changed = int(np.count_nonzero(mask != prev_mask))
            if n_changed == 0:
                converged, stop_reason = True, "fixed_point"
                current = (mask, current[1], state)
                break
            if key in seen:
                logger.info("anomaly mask revisited at iteration %d; stopping on cycle", it)
                stop_reason = "cycle"
                current = best
                break
        else:
            n_changed = int(np.count_nonzero(mask))

        try:
            model = m_step(X, mask, labels, cfg)
        except (SolverError, GraphError, ValueError) as exc:
            raise FitError(f"EM iteration {it}: {exc}", iteration=it) from exc
        t2 = time.perf_counter()

        d_hat = np.zeros(n)
        d_hat[model.subset] = model.train_decision
        warnings = ()
        if model.laplacian_clamped:
            warnings = (f"k_lap clamped to {model.k_lap_used} for {len(model.subset)} anomalous points",)
        counts = {}
        if d.truth_utility is not None:
            tp, fp, tn, fn = _confusion_counts(in_sample_predictions(mask, model), d.truth_utility)
            counts = dict(tp=tp, fp=fp, tn=tn, fn=fn)
        trace.append(IterationRecord(
            iteration=it, objective=model.dual.objective, n_anomalous=len(model.subset),
            n_changed=n_changed, beta=model.beta, k_lap_used=model.k_lap_used,
            kkt_residual=model.dual.kkt_residual, solver_iters=model.dual.n_iter,
            warnings=warnings, e_step_seconds=t1 - t0, m_step_seconds=t2 - t1, **counts,
        ))
        current = (mask, model, state)
        if best is None or model.dual.objective > best[1].dual.objective:
            best = current
        seen[key] = it
        prev_mask = mask

        if it > 1 and n_changed < cfg.em_tol * n:
            small_streak += 1
            if small_streak >= 2:
                converged, stop_reason = True, "tolerance"
                break
        else:
            small_streak = 0

    mask, model, state = current
    return FitResult(
        anomaly_mask=mask, dual=model.dual, model=model, trace=tuple(trace),
        iterations=len(trace), converged=converged, stop_reason=stop_reason,
        gem_state=state, X_train=X, labels=labels, config=cfg,
    )


def fit_two_stage(d: Dataset, cfg: FitConfig = FitConfig(),
                  gem_state: Optional[GemState] = None) -> FitResult:
    """Plain GEM (with label forcing) followed by one LapMED fit on its anomalies."""
    return fit_latlapmed(d, replace(cfg, max_em_iters=1), gem_state=gem_state)


def fit_lapmed(d: Dataset, subset=None, cfg: FitConfig = FitConfig()) -> SubsetModel:
    """LapMED on a fixed point set: all points, or e.g. the true anomalies.

    The returned model's ``decision`` method is the decision closure.
    """
    cfg.validate()
    labels = label_view(d)
    _check_labels(labels)
    mask = np.ones(d.n, dtype=bool) if subset is None else np.asarray(subset, dtype=bool)
    if mask.shape != (d.n,):
        raise ValueError("subset mask must have one entry per point")
    if not np.all(mask[labels.indices]):
        raise ValueError("every labeled point must be inside the subset")
    try:
        return m_step(d.features, mask, labels, cfg)
    except (SolverError, GraphError) as exc:
        raise FitError(str(exc)) from exc


def fit_lapmed_oracle(d: Dataset, cfg: FitConfig = FitConfig()) -> SubsetModel:
    if d.truth_anomaly is None:
        raise ValueError("the oracle configuration needs ground-truth anomaly flags")
    return fit_lapmed(d, d.truth_anomaly, cfg)


def is_anomalous(fr: FitResult, X) -> np.ndarray:
    """Out-of-sample anomaly status: a query is anomalous when its penalized
    kNN score exceeds every score inside the estimated acceptance region."""
    scores = score_queries(fr.gem_state, fr.X_train, X)
    return scores > acceptance_threshold(fr.gem_state)


def predict(fr: FitResult, queries="in-sample") -> np.ndarray:
    """Utility labels in {+1, -1}; nominal points (and zero decisions) get -1."""
    if isinstance(queries, str):
        if queries != "in-sample":
            raise ValueError(f"unknown query specifier {queries!r}")
        return in_sample_predictions(fr.anomaly_mask, fr.model)
    Xq = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Xq.shape[1] != fr.X_train.shape[1]:
        raise ValueError(f"queries have {Xq.shape[1]} features, model expects {fr.X_train.shape[1]}")
    anom = is_anomalous(fr, Xq)
    pred = np.full(len(Xq), -1, dtype=np.int8)
    if anom.any():
        pred[np.flatnonzero(anom)[fr.model.decision(Xq[anom]) > 0]] = 1
    return pred


METHODS = ("latlapmed", "two_stage", "lapmed_oracle")


class MethodRunner:
    """Picklable ``runner(dataset, phi, seed) -> in-sample predictions`` for sweeps.

    The sorted neighbor lists depend only on the data, so they are cached for
    the most recent dataset and reused across the phi grid.
    """

    def __init__(self, method: str, cfg: FitConfig = FitConfig()):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        self.method = method
        self.cfg = cfg.validate()
        self._cache = (None, None)

    def __getstate__(self):
        return {"method": self.method, "cfg": self.cfg}

    def __setstate__(self, state):
        self.__init__(state["method"], state["cfg"])

    def _gem_state(self, d):
        if self._cache[0] is not d:
            self._cache = (d, init_gem(d.features, self.cfg.gem_config()))
        return self._cache[1]

    def fit(self, d: Dataset, phi: float):
        cfg = replace(self.cfg, phi=phi)
        if self.method == "lapmed_oracle":
            return fit_lapmed_oracle(d, cfg)
        fit = fit_latlapmed if self.method == "latlapmed" else fit_two_stage
        return fit(d, cfg, gem_state=self._gem_state(d))

    def __call__(self, d: Dataset, phi: float, seed: int = 0) -> np.ndarray:
        res = self.fit(d, phi)
        if isinstance(res, SubsetModel):
            return in_sample_predictions(d.truth_anomaly, res)
        return predict(res)
