"""scikit-learn style front ends for :mod:`latlapmed.em`.

``y`` uses +1 / -1 for observed utility labels and 0 (or NaN) for points
whose label is unknown, in the spirit of sklearn's semi-supervised API.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_partial_labels
from .dataset import Dataset
from .em import FitConfig, fit_lapmed, fit_latlapmed, in_sample_predictions, predict


class LatLapMED(ClassifierMixin, BaseEstimator):
    """Semi-supervised high-utility anomaly detector.

    Parameters mirror :class:`latlapmed.em.FitConfig`; defaults are the
    settings used for the simulation benchmark.

    Attributes
    ----------
    anomaly_mask_ : ndarray of bool, shape (n_samples,)
        Estimated latent anomaly indicators for the training points.
    dual_coef_ : ndarray
        Dual multipliers of the labeled points.
    intercept_ : float
    support_ : ndarray
        Training indices of the support labels.
    trace_ : list of dict
        Per-iteration record (objective, anomaly count, changes, ...).
    n_iter_ : int
    converged_ : bool
    result_ : FitResult
    """

    def __init__(self, phi=0.05, rho=1.0, k_gem=10, C=50.0, beta="auto", kernel="rbf",
                 sigma=1.0, k_lap=50, tau=100.0, metric="euclidean", max_em_iters=30,
                 em_tol=0.0, candidate_factor=1, solver_tol=1e-8, solver_max_iter=200_000):
        self.phi = phi
        self.rho = rho
        self.k_gem = k_gem
        self.C = C
        self.beta = beta
        self.kernel = kernel
        self.sigma = sigma
        self.k_lap = k_lap
        self.tau = tau
        self.metric = metric
        self.max_em_iters = max_em_iters
        self.em_tol = em_tol
        self.candidate_factor = candidate_factor
        self.solver_tol = solver_tol
        self.solver_max_iter = solver_max_iter

    def _config(self) -> FitConfig:
        return FitConfig.from_dict(self.get_params())

    def fit(self, X, y):
        X = check_features(X)
        y = check_partial_labels(y, X.shape[0])
        res = fit_latlapmed(Dataset(X, y), self._config())
        self.result_ = res
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        self.anomaly_mask_ = res.anomaly_mask
        self.dual_coef_ = res.dual.alphas
        self.intercept_ = res.bias
        self.support_ = res.labels.indices[res.dual.support]
        self.trace_ = [r.to_dict() for r in res.trace]
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        return self

    def fit_predict(self, X, y):
        """Utility labels of the training points themselves."""
        self.fit(X, y)
        return in_sample_predictions(self.result_.anomaly_mask, self.result_.model).astype(int)

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = check_features(X, n_features=self.n_features_in_)
        return predict(self.result_, X).astype(int)

    def decision_function(self, X):
        """Kernel decision value of the final utility classifier.

        This ignores the anomaly gate; :meth:`predict` returns -1 for
        queries outside the anomalous region whatever their value here.
        """
        check_is_fitted(self, "result_")
        X = check_features(X, n_features=self.n_features_in_)
        return self.result_.model.decision(X)


class LapMED(ClassifierMixin, BaseEstimator):
    """Laplacian-regularized MED classifier on a fixed point set.

    ``beta="auto"`` uses ``10 C l / n^2`` with ``n`` the number of fitted
    points. ``fit`` accepts an optional boolean ``subset`` mask restricting
    the fit (every labeled point must be inside it).
    """

    def __init__(self, C=50.0, beta="auto", kernel="rbf", sigma=1.0, k_lap=50, tau=100.0,
                 metric="euclidean", solver_tol=1e-8, solver_max_iter=200_000):
        self.C = C
        self.beta = beta
        self.kernel = kernel
        self.sigma = sigma
        self.k_lap = k_lap
        self.tau = tau
        self.metric = metric
        self.solver_tol = solver_tol
        self.solver_max_iter = solver_max_iter

    def fit(self, X, y, subset=None):
        X = check_features(X)
        y = check_partial_labels(y, X.shape[0])
        model = fit_lapmed(Dataset(X, y), subset, FitConfig.from_dict(self.get_params()))
        self.model_ = model
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        self.dual_coef_ = model.dual.alphas
        self.intercept_ = model.dual.bias
        self.support_ = model.subset[model.problem.rows[model.dual.support]]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_features(X, n_features=self.n_features_in_)
        return self.model_.decision(X)

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, 1, -1)
