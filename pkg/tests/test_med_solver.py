import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from latlapmed.dataset import LabelView
from latlapmed.kernel_graph import gram, normalized_laplacian
from latlapmed.med_solver import (
    ConvergenceError, DualProblem, DualSolution, InfeasibleProblemError, SingularSystemError,
    SolverError, build_dual, decision_values, dual_coef, dual_objective, fit_bias, solve_dual,
)


def raw_problem(Q, y, C=50.0):
    y = np.asarray(y, dtype=np.int8)
    l = len(y)
    return DualProblem(np.asarray(Q, float), y, C, 0.0, np.arange(l), l, None, 1.0)


def random_instance(rng, l, C=50.0):
    A = rng.normal(size=(l, l + 2))
    Q = A @ A.T / l
    y = rng.choice([-1, 1], size=l)
    y[0], y[1] = 1, -1
    return raw_problem(Q, y, C)


def labels(idx, signs):
    return LabelView(np.asarray(idx, dtype=np.intp), np.asarray(signs, dtype=np.int8))


# closed forms ----------------------------------------------------------------

def test_identity_closed_form():
    sol = solve_dual(raw_problem(np.eye(2), [1, -1]))
    expected = (51 - math.sqrt(2405)) / 2
    assert np.allclose(sol.alphas, expected, atol=1e-6, rtol=0)


def test_zero_q_closed_form():
    sol = solve_dual(raw_problem(np.zeros((2, 2)), [1, -1]))
    assert np.allclose(sol.alphas, 49.0, atol=1e-6, rtol=0)


def test_same_sign_is_infeasible():
    with pytest.raises(InfeasibleProblemError):
        solve_dual(raw_problem(np.eye(3), [1, 1, 1]))
    with pytest.raises(InfeasibleProblemError):
        build_dual(np.eye(3), np.zeros((3, 3)), labels([0, 1], [1, 1]), 1.0, 0.0)


def test_small_c_has_zero_solution():
    # with C <= 1 the barrier slope at 0 cancels the linear term: alpha = 0 is optimal
    with pytest.raises(SolverError, match="empty support"):
        solve_dual(random_instance(np.random.default_rng(1), 4, C=1.0))


def test_non_convergence_reports_iterate():
    p = random_instance(np.random.default_rng(0), 15)
    with pytest.raises(ConvergenceError) as err:
        solve_dual(p, tol=1e-14, max_iter=1)
    assert err.value.alphas.shape == (15,) and err.value.kkt_residual > 0


def _independent_kkt(p, alpha, tol):
    y = p.signs.astype(float)
    G = 1.0 - p.Q @ alpha - 1.0 / (p.C - alpha)
    F = y * G
    free = alpha > 0
    nu = np.median(F[free])
    assert np.all(np.abs(F[free] - nu) <= 2 * tol + 1e-10)
    zero = ~free
    # at a bound: moving alpha_i up cannot help
    assert np.all(G[zero] - y[zero] * nu <= 2 * tol + 1e-10)


def test_kkt_on_100_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(100):
        l = int(rng.integers(2, 21))
        p = random_instance(rng, l, C=float(rng.choice([1.5, 5.0, 50.0])))
        sol = solve_dual(p, tol=1e-8)
        y = p.signs.astype(float)
        assert sol.kkt_residual <= 1e-8
        assert np.all(sol.alphas >= 0)
        assert np.all(sol.alphas <= p.C * (1 - 1e-12))
        assert abs(y @ sol.alphas) <= 1e-9 * sol.alphas.sum() + 1e-12
        _independent_kkt(p, sol.alphas, 1e-8)


def _grid_oracle(p):
    """Parameterize the equality constraint away, grid search, then refine with L-BFGS-B."""
    y = p.signs.astype(float)
    C = p.C
    neg = np.flatnonzero(y < 0)
    # free coordinates: all but the last negative one, which is fixed by the constraint
    last = neg[-1]
    free = [i for i in range(len(y)) if i != last]

    def full(z):
        a = np.zeros(len(y))
        a[free] = z
        a[last] = -(y[free] @ z) / y[last]
        return a

    def neg_obj(z):
        a = full(z)
        if np.any(a < 0) or np.any(a >= C):
            return 1e30
        return -dual_objective(p.Q, a, C)

    axes = [np.linspace(0, C * (1 - 1e-6), 161)] * len(free)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(free))
    vals = np.array([neg_obj(z) for z in grid])
    z0 = grid[np.argmin(vals)]
    res = minimize(neg_obj, z0, method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000})
    return full(res.x)


@pytest.mark.parametrize("seed", range(12))
def test_small_l_matches_grid_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    l = 2 + seed % 2
    p = random_instance(rng, l, C=5.0)
    sol = solve_dual(p, tol=1e-12)
    assert np.allclose(sol.alphas, _grid_oracle(p), atol=1e-4, rtol=0)


# build_dual ------------------------------------------------------------------

def _eight_point(seed, beta):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, 2)) * 2.0
    K = gram(X, sigma=1.0).values + 0.5 * np.eye(8)   # well conditioned
    L = normalized_laplacian(X, 3, 5.0).values
    rows = np.sort(rng.choice(8, size=4, replace=False))
    y = np.array([1, -1, 1, -1])
    return K, L, rows, y


@pytest.mark.parametrize("seed", range(10))
def test_build_dual_explicit_inverse_oracle(seed):
    beta = 0.3 + seed * 0.2
    K, L, rows, y = _eight_point(seed, beta)
    p = build_dual(K, L, labels(rows, y), 50.0, beta)
    J = np.zeros((4, 8))
    J[np.arange(4), rows] = 1.0
    Y = np.diag(y.astype(float))
    oracle = Y @ J @ np.linalg.inv(np.linalg.inv(K) + 2 * beta * L) @ J.T @ Y
    assert np.allclose(p.Q, oracle, rtol=1e-8, atol=1e-8 * np.abs(oracle).max())


def test_beta_zero_is_plain_kernel():
    K, L, rows, y = _eight_point(0, 0.0)
    p = build_dual(K, L, labels(rows, y), 1.0, 0.0)
    assert np.allclose(p.Q, np.outer(y, y) * K[np.ix_(rows, rows)])


def test_identity_kernel_gives_identity_q():
    L = normalized_laplacian(np.arange(4.0)[:, None], 1, 1.0).values
    p = build_dual(np.eye(4), L, labels([0, 1, 2, 3], [1, -1, 1, -1]), 1.0, 0.0)
    assert np.allclose(p.Q, np.eye(4))


def test_label_outside_subset():
    with pytest.raises(ValueError):
        build_dual(np.eye(3), np.zeros((3, 3)), labels([0, 5], [1, -1]), 1.0, 0.0)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_singular_system_reports_condition():
    K = np.ones((3, 3))
    L = np.zeros((3, 3))
    L[0, 0] = -0.5
    with pytest.raises(SingularSystemError) as err:
        build_dual(K, L, labels([0, 1], [1, -1]), 1.0, 1.0)
    assert err.value.condition > 1e12


@pytest.mark.parametrize("seed", range(5))
def test_q_is_psd(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 3))
    K = gram(X).values
    L = normalized_laplacian(X, 10, 10.0).values
    rows = np.sort(rng.choice(150, 40, replace=False))
    y = np.where(np.arange(40) % 2, 1, -1)
    p = build_dual(K, L, labels(rows, y), 50.0, 2.0)
    ev = np.linalg.eigvalsh(p.Q)
    assert np.allclose(p.Q, p.Q.T)
    assert ev.min() >= -1e-8 * np.linalg.norm(p.Q, 2)


# bias and decision values ----------------------------------------------------

@pytest.mark.parametrize("res,expected", [([0.3], 0.3), ([0.1, 0.5, 0.9], 0.5), ([0.1, 0.5], 0.3)])
def test_bias_examples(res, expected):
    assert fit_bias(np.zeros(len(res)), np.zeros(len(res)) - np.negative(res)) == pytest.approx(expected)


def _median_oracle(v):
    s = sorted(v)
    m = len(s)
    return s[m // 2] if m % 2 else 0.5 * (s[m // 2 - 1] + s[m // 2])


def test_bias_median_oracle_100_sets():
    rng = np.random.default_rng(3)
    for _ in range(100):
        m = int(rng.integers(1, 30))
        f = rng.normal(size=m)
        y = rng.choice([-1.0, 1.0], size=m)
        assert fit_bias(f, y) == pytest.approx(_median_oracle(list(y - f)), abs=1e-15)


def test_bias_empty_support():
    with pytest.raises(SolverError):
        fit_bias([], [])


def _fitted_subset(seed=0):
    K, L, rows, y = _eight_point(seed, 0.7)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(8, 2)) * 2.0
    K = gram(X).values
    p = build_dual(K, L, labels(rows, y), 50.0, 0.7)
    return X, K, L, rows, y, p, solve_dual(p)


def test_decision_at_training_point_and_zero_alpha():
    X, K, L, rows, y, p, sol = _fitted_subset()
    train = K @ dual_coef(p, sol) + sol.bias
    assert np.allclose(decision_values(gram(X[:3], Y=X), p, sol), train[:3])
    zero = DualSolution(np.zeros(4), 0.25, 0.0, 0.0, np.array([], dtype=np.intp))
    assert np.allclose(decision_values(gram(X, Y=X), p, zero), 0.25)


def test_decision_dense_oracle():
    X, K, L, rows, y, p, sol = _fitted_subset(4)
    Xq = np.random.default_rng(9).normal(size=(6, 2))
    J = np.zeros((4, 8))
    J[np.arange(4), rows] = 1.0
    Y = np.diag(y.astype(float))
    M = np.eye(8) + 2 * 0.7 * L @ K
    oracle = gram(Xq, Y=X) @ np.linalg.solve(M, J.T @ Y @ sol.alphas) + sol.bias
    assert np.allclose(decision_values(gram(Xq, Y=X), p, sol), oracle)
    with pytest.raises(ValueError):
        decision_values(np.zeros((2, 5)), p, sol)


def test_bias_is_median_over_support():
    X, K, L, rows, y, p, sol = _fitted_subset(2)
    f = (K @ dual_coef(p, sol))[rows][sol.support]
    assert sol.bias == pytest.approx(_median_oracle(list(y[sol.support] - f)))
    assert np.all(sol.alphas[sol.support] > 1e-6 * p.C)


# objective shape -------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), lam=st.floats(0.0, 1.0))
def test_objective_concave_on_feasible_segments(seed, lam):
    rng = np.random.default_rng(seed)
    p = random_instance(rng, 6, C=10.0)
    y = p.signs.astype(float)

    def feasible():
        a = rng.uniform(0, 4, size=6)
        pos, neg = y > 0, y < 0
        a[neg] *= a[pos].sum() / a[neg].sum()
        return a

    a, b = feasible(), feasible()
    if max(a.max(), b.max()) >= p.C:
        return
    mid = lam * a + (1 - lam) * b
    g = lambda v: dual_objective(p.Q, v, p.C)
    assert g(mid) >= lam * g(a) + (1 - lam) * g(b) - 1e-9 * (1 + abs(g(a)) + abs(g(b)))


def test_objective_outside_barrier():
    assert dual_objective(np.eye(2), [50.0, 1.0], 50.0) == -np.inf
