"""Semi-supervised detection of high-utility anomalies.

An EM loop alternates a GEM estimate of which points are anomalous with a
Laplacian-regularized maximum entropy discrimination classifier fit on the
anomalous subset only.
"""
from .dataset import DataError, Dataset, LabelView, label_view, load_csv, write_csv
from .em import (
    FitConfig, FitError, FitResult, fit_lapmed, fit_lapmed_oracle, fit_latlapmed,
    fit_two_stage, predict,
)
from .estimator import LapMED, LatLapMED
from .evaluation import MetricRecord, PRCurve, auc_pr, confusion, pr_sweep
from .simgen import SimConfig, generate

__version__ = "0.1.0"

__all__ = [
    "DataError", "Dataset", "LabelView", "label_view", "load_csv", "write_csv",
    "FitConfig", "FitError", "FitResult", "fit_lapmed", "fit_lapmed_oracle", "fit_latlapmed",
    "fit_two_stage", "predict", "LapMED", "LatLapMED", "MetricRecord", "PRCurve", "auc_pr",
    "confusion", "pr_sweep", "SimConfig", "generate", "__version__",
]
