"""Input checks shared by the estimator front end."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, *, n_features=None, name="X") -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                    input_name=name)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"{name} has {X.shape[1]} features, the model was fit with {n_features}")
    return X


def check_partial_labels(y, n: int) -> np.ndarray:
    """Labels in {+1, -1} with 0 or NaN marking unobserved points."""
    y = check_array(y, dtype=np.float64, ensure_2d=False, ensure_all_finite="allow-nan",
                    input_name="y")
    if y.ndim != 1 or y.shape[0] != n:
        raise ValueError(f"y must be a 1-D array of length {n}, got shape {y.shape}")
    y = np.where(np.isnan(y), 0.0, y)
    bad = ~np.isin(y, (-1.0, 0.0, 1.0))
    if bad.any():
        raise ValueError(f"y[{int(np.flatnonzero(bad)[0])}] is not one of +1, -1, 0 or NaN")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("y needs at least one observed label of each sign")
    return y.astype(np.int8)
