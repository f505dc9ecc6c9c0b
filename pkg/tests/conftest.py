import numpy as np
import pytest

from latlapmed.simgen import SimConfig, generate


@pytest.fixture(scope="session")
def small_sim():
    """A quick 1500-point benchmark draw with labels of both signs."""
    return generate(SimConfig(n=1500, seed=3))


def two_blob_data(seed=0, n_nominal=150, n_anom=20):
    rng = np.random.default_rng(seed)
    nominal = rng.normal(0, 0.3, size=(n_nominal, 2))
    ang = rng.uniform(0, 2 * np.pi, n_anom)
    anom = np.c_[4 * np.cos(ang), 4 * np.sin(ang)] + rng.normal(0, 0.1, (n_anom, 2))
    X = np.vstack([nominal, anom])
    y = np.zeros(len(X))
    idx = n_nominal + np.arange(n_anom)
    right = anom[:, 0] > 0
    y[idx[right][:3]] = 1
    y[idx[~right][:3]] = -1
    return X, y
