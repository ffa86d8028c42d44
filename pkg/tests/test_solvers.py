import numpy as np
import pytest
from hypothesis import given, strategies as st

from riwtl.solvers import (ConvergenceError, DegenerateProblemError, NonUniqueSolutionWarning, SolverOptions,
                           WeightedProblem, fit_scad, fit_weighted_lasso, kkt_violation, lasso_path, path_gram,
                           scad_penalty, soft_threshold)
from riwtl.tuning import lambda_max

from conftest import orthonormal_design


def random_problem(seed, n=None, p=None, frac=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(5, 201))
    p = p or int(rng.integers(1, 51))
    x = rng.standard_normal((n, p)) * rng.uniform(0.2, 3.0, p)
    beta = np.where(rng.random(p) < 0.3, rng.normal(0, 2, p), 0.0)
    y = x @ beta + rng.standard_normal(n)
    w = rng.uniform(0.0, 3.0, n) * (rng.random(n) > 0.1)
    w[0] = 1.0
    denom = float(n + rng.integers(0, n + 1))
    lam = lambda_max(x, y, w, denom) * (frac if frac is not None else rng.uniform(0.02, 1.1))
    return WeightedProblem(x, y, w, denom, lam)


def test_soft_threshold_examples():
    assert soft_threshold(0.5, 1.0) == 0.0
    assert soft_threshold(3, 1) == 2.0
    assert soft_threshold(-3, 1) == -2.0
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_full_shrinkage_above_lambda_max():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((30, 6))
    y = rng.standard_normal(30)
    lm = lambda_max(x, y)
    assert np.all(fit_weighted_lasso(WeightedProblem.unweighted(x, y, lm)) == 0)
    assert np.all(fit_weighted_lasso(WeightedProblem.unweighted(x, y, 1.5 * lm)) == 0)


def test_orthonormal_closed_form():
    x = orthonormal_design(60, 8, seed=3)
    y = x @ np.array([3, -2, 0.5, 0, 0, 1, 0, 0.1]) + np.random.default_rng(3).standard_normal(60)
    z = x.T @ y / 60
    for lam in (0.05, 0.3, 1.0):
        got = fit_weighted_lasso(WeightedProblem.unweighted(x, y, lam), SolverOptions(tol=1e-12))
        want = np.array([soft_threshold(v, lam) for v in z])
        np.testing.assert_allclose(got, want, atol=1e-8, rtol=0)


def test_weight_and_lambda_scaling_invariance():
    prob = random_problem(11, n=80, p=10, frac=0.2)
    opts = SolverOptions(tol=1e-12)
    b1 = fit_weighted_lasso(prob, opts)
    # scaling every weight by c scales the loss by c; lambda must follow
    c = 3.7
    b2 = fit_weighted_lasso(WeightedProblem(prob.x, prob.y, c * prob.obs_weights, prob.denom, c * prob.lam), opts)
    np.testing.assert_allclose(b1, b2, atol=1e-9)


def test_all_zero_weights_rejected():
    with pytest.raises(DegenerateProblemError):
        fit_weighted_lasso(WeightedProblem(np.ones((3, 2)), np.ones(3), np.zeros(3), 3.0, 0.1))


def test_invalid_problem_inputs():
    with pytest.raises(ValueError):
        WeightedProblem(np.ones((3, 2)), np.ones(3), -np.ones(3), 3.0, 0.1)
    with pytest.raises(ValueError):
        WeightedProblem(np.ones((3, 2)), np.ones(3), np.ones(3), 0.0, 0.1)
    with pytest.raises(ValueError):
        SolverOptions(tol=0)


def test_zero_variance_column_stays_zero():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 4))
    x[:, 2] = 0.0
    y = x[:, 0] + rng.standard_normal(40)
    b = fit_weighted_lasso(WeightedProblem.unweighted(x, y, 0.01))
    assert b[2] == 0.0


def test_lambda_zero_p_greater_n_warns():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 8))
    with pytest.warns(NonUniqueSolutionWarning):
        try:
            fit_weighted_lasso(WeightedProblem.unweighted(x, rng.standard_normal(5), 0.0),
                               SolverOptions(max_iter=50))
        except ConvergenceError:
            pass


def test_convergence_error_carries_iterate():
    prob = random_problem(5, n=50, p=30, frac=0.01)
    with pytest.raises(ConvergenceError) as info:
        fit_weighted_lasso(prob, SolverOptions(max_iter=1, tol=1e-14))
    assert info.value.beta.shape == (30,)


@given(st.integers(0, 10_000))
def test_kkt_property(seed):
    prob = random_problem(seed)
    b = fit_weighted_lasso(prob)
    assert kkt_violation(prob.gradient(b), b, prob.lam) <= 1e-6
    # objective never worse than the zero vector
    assert prob.objective(b) <= prob.objective(np.zeros(prob.x.shape[1])) + 1e-12


@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    prob = random_problem(seed, n=60, p=8)
    perm = np.random.default_rng(seed).permutation(60)
    opts = SolverOptions(tol=1e-13)
    b1 = fit_weighted_lasso(prob, opts)
    b2 = fit_weighted_lasso(WeightedProblem(prob.x[perm], prob.y[perm], prob.obs_weights[perm],
                                            prob.denom, prob.lam), opts)
    np.testing.assert_allclose(b1, b2, atol=1e-10)


@given(st.integers(0, 10_000))
def test_zero_weight_rows_have_no_effect(seed):
    prob = random_problem(seed, n=70, p=10)
    keep = prob.obs_weights > 0
    b1 = fit_weighted_lasso(prob)
    b2 = fit_weighted_lasso(WeightedProblem(prob.x[keep], prob.y[keep], prob.obs_weights[keep],
                                            prob.denom, prob.lam))
    np.testing.assert_array_equal(b1, b2)


def test_objective_not_worse_than_warm_start():
    prob = random_problem(9, n=100, p=20, frac=0.1)
    warm = np.random.default_rng(9).standard_normal(20)
    b = fit_weighted_lasso(prob, SolverOptions(warm_start=warm))
    assert prob.objective(b) <= prob.objective(warm)


def test_path_examples():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((80, 12))
    y = x[:, :3].sum(axis=1) + rng.standard_normal(80)
    lm = lambda_max(x, y)
    grid = lm * np.logspace(0, -2, 15)
    path = lasso_path(x, y, grid, SolverOptions(tol=1e-10))
    assert np.all(path[0] == 0)
    for i in (4, 14):
        cold = fit_weighted_lasso(WeightedProblem.unweighted(x, y, grid[i]), SolverOptions(tol=1e-10))
        np.testing.assert_allclose(path[i], cold, atol=1e-6)
    single = lasso_path(x, y, [grid[5]], SolverOptions(tol=1e-10))[0]
    np.testing.assert_allclose(single, fit_weighted_lasso(WeightedProblem.unweighted(x, y, grid[5]),
                                                          SolverOptions(tol=1e-10)), atol=1e-9)
    with pytest.raises(ValueError):
        lasso_path(x, y, grid[::-1])


def test_path_error_modes():
    prob = random_problem(5, n=40, p=30)
    G, c = prob.gram()
    grid = lambda_max(prob.x, prob.y, prob.obs_weights, prob.denom) * np.logspace(0, -4, 6)
    opts = SolverOptions(max_iter=2, tol=1e-14)
    with pytest.raises(ConvergenceError):
        path_gram(G, c, grid, opts)
    out = path_gram(G, c, grid, opts, errors="truncate")
    first = next(i for i, b in enumerate(out) if b is None)
    assert all(b is None for b in out[first:])


def test_scad_examples():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((200, 5))
    y = x @ np.array([1.0, -2, 0, 0.5, 3]) + rng.standard_normal(200)
    ols = np.linalg.lstsq(x, y, rcond=None)[0]
    np.testing.assert_allclose(fit_scad(x, y, 0.0, opts=SolverOptions(tol=1e-12)), ols, atol=1e-6)
    assert np.all(fit_scad(x, y, 10 * lambda_max(x, y)) == 0)

    xo = orthonormal_design(100, 6, seed=4)
    yo = xo @ np.array([3.0, -2.5, 0.2, 0, 1.2, 0]) + 0.3 * np.random.default_rng(4).standard_normal(100)
    z = xo.T @ yo / 100
    lam, a = 0.3, 3.7
    got = fit_scad(xo, yo, lam, a, SolverOptions(tol=1e-12))
    big = np.abs(z) > a * lam
    assert big.sum() >= 2
    np.testing.assert_allclose(got[big], z[big], atol=1e-8)
    # small coordinates follow the SCAD thresholding rule
    for j in np.flatnonzero(np.abs(z) <= 2 * lam):
        assert got[j] == pytest.approx(soft_threshold(z[j], lam), abs=1e-8)
    for j in np.flatnonzero((np.abs(z) > 2 * lam) & ~big):
        assert got[j] == pytest.approx(((a - 1) * z[j] - np.sign(z[j]) * a * lam) / (a - 2), abs=1e-8)


def test_scad_penalty_pieces():
    lam, a = 1.0, 3.7
    assert scad_penalty([0.5], lam, a) == pytest.approx(0.5)
    assert scad_penalty([10.0], lam, a) == pytest.approx((a + 1) / 2)
    with pytest.raises(ValueError):
        fit_scad(np.ones((4, 1)), np.ones(4), 0.1, a=1.5)
