import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latlapmed.gem import ceil_count
from latlapmed.simgen import (
    SIM_STREAM, SimConfig, generate, random_scale_matrix, sample_t, score_points, substream,
)


def test_score_examples():
    assert score_points([[3.0, 3.0, 3.0, 3.0]], [[0, 1]])[0] == 0.0
    assert score_points([[4.0, 2.0, 1.0, 1.0]], [[0, 1]])[0] == pytest.approx(2.0)
    x = np.array([[5.0, 1.0, 2.0, 3.0]])
    assert score_points(x, [[0]])[0] == pytest.approx(5.0 - 2.0)


def test_score_errors():
    with pytest.raises(ValueError):
        score_points(np.ones((2, 3)), [[0, 1, 2]])
    with pytest.raises(ValueError):
        score_points(np.ones((2, 3)), [[]])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.integers(2, 7))
def test_score_matches_loop_and_is_order_invariant(seed, p):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, p))
    comps = [rng.choice(p, size=int(rng.integers(1, p)), replace=False) for _ in range(3)]
    loop = np.array([
        max(np.mean([row[j] for j in c]) - np.mean([row[j] for j in range(p) if j not in c])
            for c in comps)
        for row in X
    ])
    assert np.allclose(score_points(X, comps), loop)
    assert np.array_equal(score_points(X, comps), score_points(X, comps[::-1]))


@pytest.mark.parametrize("n,p,seed", [(7000, 3, 1), (2000, 6, 0), (999, 4, 5)])
def test_counting_contract(n, p, seed):
    d = generate(SimConfig(n=n, p=p, seed=seed))
    n_anom = ceil_count(0.05, n)
    n_high = ceil_count(0.25, n_anom)
    n_rev = math.floor(0.3 * n_high + 0.5)
    assert d.truth_anomaly.sum() == n_anom
    assert (d.truth_utility == 1).sum() == n_high
    assert np.all(d.truth_anomaly[d.truth_utility == 1])
    assert (d.labels == 1).sum() == n_rev == (d.labels == -1).sum()
    assert np.all(d.truth_utility[d.labels == 1] == 1)
    assert np.all(d.truth_utility[d.labels == -1] == -1)
    assert np.all(d.features >= 0)
    assert d.features.shape == (n, p)


def test_seven_thousand_rows():
    d = generate(SimConfig(seed=1))
    assert d.n == 7000 and d.p == 3 and d.has_truth


def test_determinism():
    a, b = generate(SimConfig(n=500, seed=9)), generate(SimConfig(n=500, seed=9))
    for f in ("features", "labels", "truth_anomaly", "truth_utility"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = generate(SimConfig(n=500, seed=10))
    assert not np.array_equal(a.features, c.features)


def test_latent_t_covariance_moment():
    rng = substream(4, SIM_STREAM)
    scale = random_scale_matrix(3, rng)
    z = sample_t(100_000, scale, 30.0, rng, fold=False)
    emp = np.cov(z, rowvar=False)
    target = scale * 30.0 / 28.0
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.10


def test_scale_matrix_is_pd():
    S = random_scale_matrix(6, np.random.default_rng(0))
    assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() >= 0.1 - 1e-12


def test_config_validation():
    with pytest.raises(ValueError, match="infeasible"):
        SimConfig(p=3, component_size_range=(1, 3)).validate()
    with pytest.raises(ValueError):
        SimConfig(df=2).validate()
    with pytest.raises(ValueError, match="bogus"):
        SimConfig.from_dict({"bogus": 1})
    cfg = SimConfig(p=6, component_size_range=(2, 4))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
