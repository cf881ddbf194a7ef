import numpy as np
import pytest

from emtransfer.optim import (
    BUDGET_EXHAUSTED,
    CONVERGED,
    LINE_SEARCH_FAILED,
    NUMERICAL_FAILURE,
    SolverConfig,
    minimize,
)


def quadratic(A, b):
    def objective(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b
    return objective


def random_spd(dim, rng):
    M = rng.standard_normal((dim, dim))
    return M @ M.T + dim * np.eye(dim)


def test_shifted_sphere():
    c = np.array([1.0, -2.0, 3.0])

    def objective(x):
        return float(np.sum((x - c) ** 2)), 2.0 * (x - c)

    result = minimize(objective, np.zeros(3))
    assert result.status == CONVERGED
    np.testing.assert_allclose(result.x, c, atol=1e-8)


def test_matches_direct_solve_on_random_spd():
    rng = np.random.default_rng(0)
    A = random_spd(5, rng)
    b = rng.standard_normal(5)
    result = minimize(quadratic(A, b), np.zeros(5))
    expected = np.linalg.solve(A, b)
    assert result.status == CONVERGED
    np.testing.assert_allclose(result.x, expected, rtol=1e-6, atol=1e-9)


def test_rosenbrock():
    def objective(x):
        a, bb = 1.0, 100.0
        f = (a - x[0]) ** 2 + bb * (x[1] - x[0] ** 2) ** 2
        g = np.array([
            -2.0 * (a - x[0]) - 4.0 * bb * x[0] * (x[1] - x[0] ** 2),
            2.0 * bb * (x[1] - x[0] ** 2),
        ])
        return f, g

    result = minimize(objective, np.array([-1.2, 1.0]),
                      SolverConfig(gradient_tolerance=1e-8))
    assert result.status == CONVERGED
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-5)


def test_accepted_values_non_increasing():
    rng = np.random.default_rng(1)
    A = random_spd(8, rng)
    b = rng.standard_normal(8)
    result = minimize(quadratic(A, b), rng.standard_normal(8))
    diffs = np.diff(np.array(result.value_trace))
    assert np.all(diffs <= 0.0)


@pytest.mark.parametrize("dim", [2, 3, 5, 8, 10])
def test_quadratic_iteration_count(dim):
    rng = np.random.default_rng(dim)
    A = random_spd(dim, rng)
    b = rng.standard_normal(dim)
    result = minimize(quadratic(A, b), rng.standard_normal(dim))
    assert result.status == CONVERGED
    assert result.iterations <= dim + 5


def test_converged_gradient_norm_below_tolerance():
    rng = np.random.default_rng(4)
    A = random_spd(6, rng)
    b = rng.standard_normal(6)
    config = SolverConfig(gradient_tolerance=1e-8)
    result = minimize(quadratic(A, b), np.zeros(6), config)
    assert result.status == CONVERGED
    assert result.gradient_norm <= config.gradient_tolerance


def test_budget_exhaustion_reported():
    rng = np.random.default_rng(5)
    A = random_spd(10, rng)
    b = rng.standard_normal(10)
    result = minimize(quadratic(A, b), rng.standard_normal(10),
                      SolverConfig(max_evaluations=3, gradient_tolerance=1e-14))
    assert result.status == BUDGET_EXHAUSTED
    assert result.evaluations <= 3


def test_non_finite_region_is_numerical_failure():
    def objective(x):
        if x[0] > 1.0:
            return np.nan, np.array([np.nan])
        return (x[0] - 2.0) ** 2, np.array([2.0 * (x[0] - 2.0)])

    result = minimize(objective, np.array([0.0]))
    assert result.status == NUMERICAL_FAILURE
    assert np.all(result.x <= 1.0)


def test_non_finite_at_start():
    def objective(x):
        return np.inf, np.zeros_like(x)

    result = minimize(objective, np.zeros(2))
    assert result.status == NUMERICAL_FAILURE


def test_inconsistent_gradient_fails_line_search():
    # Constant objective with a phony descent gradient: no step can satisfy
    # the sufficient-decrease condition.
    def objective(x):
        return 0.0, np.ones_like(x)

    result = minimize(objective, np.zeros(2))
    assert result.status == LINE_SEARCH_FAILED
