"""Solver tests.

The unpenalized oracle is a dense damped Newton solver written here from
scratch (full Hessian, numpy solve); it shares no code with the package
solver. Penalized fits are certified through the subgradient conditions
recomputed directly from the data.
"""

import math

import numpy as np
import pytest

from countdag.lasso import (
    CvResult,
    DegenerateFoldError,
    DivergenceError,
    LassoFit,
    LassoProblem,
    SolverOptions,
    cv_select,
    fit_poisson_lasso,
    lambda_max,
    lambda_path,
    soft_threshold,
)
from countdag.simulate import make_rng


def newton_mle(x, y, tol=1e-12, max_iter=500):
    """Dense Newton MLE for Poisson regression with intercept, no penalty."""
    n, q = x.shape
    d = np.column_stack([np.ones(n), x])
    beta = np.zeros(q + 1)
    beta[0] = math.log(y.mean())
    for _ in range(max_iter):
        eta = d @ beta
        mu = np.exp(eta)
        grad = d.T @ (mu - y) / n
        if np.max(np.abs(grad)) < tol:
            break
        h = (d * mu[:, None]).T @ d / n
        step = np.linalg.solve(h, grad)
        obj = np.mean(mu - y * eta)
        t = 1.0
        while True:
            nb = beta - t * step
            ne = d @ nb
            nobj = np.mean(np.exp(np.clip(ne, -700, 700)) - y * ne)
            if nobj <= obj + 1e-14 or t < 1e-10:
                break
            t /= 2
        beta = nb
    return beta[0], beta[1:]


def random_problem(seed, n=200, q=3):
    """Counts-on-counts regression with weights in the sparse-regime range."""
    rng = make_rng(seed)
    x = rng.poisson(1.0, size=(n, q)).astype(float)
    w = rng.uniform(0.5, 1.5, q) * rng.choice([-1.0, 1.0], q)
    b0 = rng.uniform(1.0, 3.0)
    rate = np.exp(np.clip(b0 + x @ w, -30, 30))
    y = rng.poisson(rate).astype(float)
    if y.sum() == 0:
        y[0] = 1.0
    return LassoProblem(x, y)


def true_gradient(problem, fit):
    eta = fit.intercept + problem.design @ fit.coef
    mu = np.exp(eta)
    g = problem.design.T @ (mu - problem.response) / problem.n
    g0 = float(np.mean(mu - problem.response))
    return g, g0


def kkt_violation(problem, fit):
    g, g0 = true_gradient(problem, fit)
    worst = abs(g0)
    for k in range(problem.q):
        if fit.coef[k] != 0:
            worst = max(worst, abs(g[k] + fit.lam * np.sign(fit.coef[k])))
        else:
            worst = max(worst, max(0.0, abs(g[k]) - fit.lam))
    return worst


# ---------------------------------------------------------------------------
# soft_threshold


def test_soft_threshold_values():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    assert np.allclose(soft_threshold(np.array([2.0, -0.3]), 0.5), [1.5, 0.0])


def test_soft_threshold_zero_gamma_identity():
    z = np.linspace(-2, 2, 9)
    assert np.allclose(soft_threshold(z, 0.0), z)


# ---------------------------------------------------------------------------
# problem validation


def test_problem_validation():
    with pytest.raises(ValueError):
        LassoProblem(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        LassoProblem(np.array([[np.inf]]), np.ones(1))
    with pytest.raises(ValueError):
        LassoProblem(np.ones((2, 1)), np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        LassoProblem(np.ones((2, 2)), np.ones(2), penalized=[True])


def test_fit_rejects_zero_response():
    prob = LassoProblem(np.ones((4, 1)), np.zeros(4))
    with pytest.raises(ValueError, match="identically zero"):
        fit_poisson_lasso(prob, 0.1)


def test_fit_rejects_bad_lambda():
    prob = random_problem(0)
    with pytest.raises(ValueError):
        fit_poisson_lasso(prob, -0.1)


# ---------------------------------------------------------------------------
# closed forms and oracles


def test_unpenalized_binary_predictor_closed_form():
    # group means: exp(b0) = mean(y | x=0), exp(b0+b1) = mean(y | x=1)
    x = np.array([[0.0], [0.0], [0.0], [1.0], [1.0]])
    y = np.array([1.0, 2.0, 3.0, 4.0, 8.0])
    tight = SolverOptions(kkt_tol=1e-13, kkt_accept=1e-11)
    fit = fit_poisson_lasso(LassoProblem(x, y), 0.0, options=tight)
    assert fit.intercept == pytest.approx(math.log(2.0), abs=1e-9)
    assert fit.coef[0] == pytest.approx(math.log(3.0), abs=1e-9)


def test_unpenalized_matches_dense_newton():
    for seed in range(10):
        prob = random_problem(seed)
        fit = fit_poisson_lasso(prob, 0.0)
        b0, b = newton_mle(np.asarray(prob.design), prob.response)
        assert abs(fit.intercept - b0) < 1e-6
        assert np.max(np.abs(fit.coef - b)) < 1e-6


def test_smooth_gradient_matches_finite_differences():
    prob = random_problem(3, n=60, q=3)
    x, y = np.asarray(prob.design), prob.response
    theta = np.array([0.4, 0.1, -0.2, 0.05])  # intercept + 3 coefs

    def f(t):
        eta = t[0] + x @ t[1:]
        return np.mean(np.exp(eta) - y * eta)

    d = np.column_stack([np.ones(len(y)), x])
    eta = d @ theta
    analytic = d.T @ (np.exp(eta) - y) / len(y)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (f(theta + e) - f(theta - e)) / (2 * h)
        assert fd == pytest.approx(analytic[k], rel=1e-6, abs=1e-8)


# ---------------------------------------------------------------------------
# stationarity, KKT, trace invariants


def test_stationarity_identity():
    for seed in (0, 5, 9):
        prob = random_problem(seed)
        for lam in (0.0, 0.05, 0.5):
            fit = fit_poisson_lasso(prob, lam)
            mu = np.exp(fit.intercept + prob.design @ fit.coef)
            ybar = prob.response.mean()
            assert abs(mu.mean() - ybar) <= 1e-8 * ybar


def test_kkt_certificate_recomputed():
    for seed in range(8):
        prob = random_problem(seed)
        lmax = lambda_max(prob)
        for lam in (0.6 * lmax, 0.2 * lmax, 0.02 * lmax):
            fit = fit_poisson_lasso(prob, lam)
            assert fit.kkt_residual <= 1e-6
            assert kkt_violation(prob, fit) <= 1e-6


def test_objective_trace_nonincreasing():
    for seed in range(6):
        prob = random_problem(seed)
        for lam in (0.0, 0.1):
            fit = fit_poisson_lasso(prob, lam)
            t = np.array(fit.objective_trace)
            assert np.all(np.diff(t) <= 1e-10 * (1 + np.abs(t[:-1])))


def test_row_duplication_invariance():
    prob = random_problem(4, n=80)
    x, y = np.asarray(prob.design), prob.response
    dup = LassoProblem(np.vstack([x, x]), np.concatenate([y, y]))
    assert lambda_max(dup) == pytest.approx(lambda_max(prob), rel=1e-12)
    f1 = fit_poisson_lasso(prob, 0.1)
    f2 = fit_poisson_lasso(dup, 0.1)
    assert f1.intercept == pytest.approx(f2.intercept, abs=1e-8)
    assert np.allclose(f1.coef, f2.coef, atol=1e-8)


def test_unpenalized_columns_flag():
    prob0 = random_problem(7)
    prob = LassoProblem(
        prob0.design, prob0.response, penalized=[True, False, True]
    )
    lam = 2 * lambda_max(prob0)  # kills penalized columns outright
    fit = fit_poisson_lasso(prob, lam)
    assert fit.coef[0] == 0.0 and fit.coef[2] == 0.0
    g, _ = true_gradient(prob, fit)
    assert abs(g[1]) <= 1e-6  # unpenalized column is fully optimized


def test_divergent_fit_raises():
    x = np.array([[0.0], [1.0]])
    y = np.array([1.0, 1e15])
    with pytest.raises(DivergenceError):
        fit_poisson_lasso(LassoProblem(x, y), 0.0)


# ---------------------------------------------------------------------------
# lambda_max and the path


def test_lambda_max_hand_value():
    prob = LassoProblem(np.array([[0.0], [1.0]]), np.array([1.0, 3.0]))
    assert lambda_max(prob) == pytest.approx(0.5, abs=1e-15)


def test_lambda_max_constant_response():
    prob = LassoProblem(np.arange(6, dtype=float).reshape(-1, 1), np.full(6, 4.0))
    assert lambda_max(prob) == 0.0


def test_fit_above_lambda_max_is_intercept_only():
    for seed in range(5):
        prob = random_problem(seed)
        fit = fit_poisson_lasso(prob, 1.01 * lambda_max(prob))
        assert np.all(fit.coef == 0.0)
        assert fit.intercept == pytest.approx(
            math.log(prob.response.mean()), abs=1e-12
        )


def test_path_grid_two_points():
    prob = random_problem(1)
    path = lambda_path(prob, grid_size=2, ratio=0.1)
    lmax = lambda_max(prob)
    assert np.allclose(path.lambdas, [lmax, 0.1 * lmax])


def test_path_grid_log_spacing_descending():
    prob = random_problem(2)
    path = lambda_path(prob, grid_size=50, ratio=1e-3)
    lams = path.lambdas
    assert len(lams) == 50
    assert np.all(np.diff(lams) < 0)
    logs = np.log(lams)
    assert np.allclose(np.diff(logs), np.diff(logs)[0])


def test_path_fits_all_pass_kkt():
    for seed in range(4):
        prob = random_problem(seed)
        path = lambda_path(prob, grid_size=25, ratio=1e-3)
        for fit in path.fits:
            assert kkt_violation(prob, fit) <= 1e-6


def test_path_active_sets_mostly_nested():
    grows = 0
    total = 0
    for seed in range(20):
        prob = random_problem(seed)
        path = lambda_path(prob, grid_size=20, ratio=1e-2)
        sizes = [int(np.sum(np.abs(f.coef) > 1e-8)) for f in path.fits]
        grows += sum(b >= a for a, b in zip(sizes, sizes[1:]))
        total += len(sizes) - 1
    assert grows / total >= 0.9


def test_path_fit_at_lookup():
    prob = random_problem(3)
    path = lambda_path(prob, grid_size=10, ratio=0.01)
    lam = float(path.lambdas[4])
    assert path.fit_at(lam) is path.fits[4]
    with pytest.raises(KeyError):
        path.fit_at(lam * 1.37)


# ---------------------------------------------------------------------------
# cross-validation


def test_cv_band_ordering_invariant():
    for seed in range(6):
        prob = random_problem(seed, n=120)
        cv = cv_select(prob, folds=4, grid_size=20, ratio=1e-2, seed=seed)
        assert cv.lambda_band_lo <= cv.lambda_min <= cv.lambda_band_hi
        assert isinstance(cv, CvResult)
        assert cv.se_loss.shape == cv.mean_loss.shape


def test_cv_pure_noise_band_hits_lambda_max():
    rng = make_rng(10)
    x = rng.poisson(2.0, size=(300, 4)).astype(float)
    y = rng.poisson(3.0, size=300).astype(float)
    prob = LassoProblem(x, y)
    cv = cv_select(prob, folds=5, grid_size=25, ratio=1e-2, seed=0)
    assert cv.lambda_band_hi == pytest.approx(lambda_max(prob))


def test_cv_strong_signal_keeps_predictor():
    kept = 0
    for seed in range(100):
        rng = make_rng(seed)
        x = rng.poisson(2.0, size=(500, 1)).astype(float)
        y = rng.poisson(np.exp(0.3 + 1.0 * np.minimum(x[:, 0], 8))).astype(float)
        prob = LassoProblem(x, y)
        cv = cv_select(prob, folds=5, grid_size=20, ratio=1e-2, seed=seed)
        fit = cv.path.fit_at(cv.lambda_band_hi)
        kept += abs(fit.coef[0]) > 1e-8
    assert kept >= 95


def test_cv_single_lambda_grid():
    prob = random_problem(5, n=60)
    cv = cv_select(prob, folds=3, grid_size=1, seed=1)
    assert cv.lambda_min == cv.lambda_band_lo == cv.lambda_band_hi


def test_cv_leave_one_out():
    prob = random_problem(6, n=12)
    cv = cv_select(prob, folds=12, grid_size=5, ratio=0.1, seed=2)
    assert cv.mean_loss.shape == (5,)


def test_cv_squared_error_switch():
    prob = random_problem(7, n=80)
    cv = cv_select(prob, folds=4, grid_size=8, ratio=0.1, loss="squared_error")
    assert cv.loss == "squared_error"
    assert np.all(cv.mean_loss >= 0)


def test_cv_degenerate_folds_error():
    x = np.ones((8, 1))
    y = np.zeros(8)
    with pytest.raises((DegenerateFoldError, ValueError)):
        cv_select(LassoProblem(x, y), folds=4, grid_size=3, ratio=0.1)


def test_cv_deterministic():
    prob = random_problem(8, n=100)
    a = cv_select(prob, folds=5, grid_size=10, ratio=0.1, seed=3)
    b = cv_select(prob, folds=5, grid_size=10, ratio=0.1, seed=3)
    assert np.array_equal(a.mean_loss, b.mean_loss)
    assert a.lambda_min == b.lambda_min
    assert a.lambda_band_lo == b.lambda_band_lo


def test_cv_validates_folds():
    prob = random_problem(9, n=20)
    with pytest.raises(ValueError):
        cv_select(prob, folds=1)
    with pytest.raises(ValueError):
        cv_select(prob, folds=21)


# ---------------------------------------------------------------------------
# options


def test_options_are_applied():
    prob = random_problem(11)
    opts = SolverOptions(max_outer=1, kkt_tol=1e-14, kkt_accept=1e-14)
    from countdag.lasso import ConvergenceError

    with pytest.raises(ConvergenceError):
        fit_poisson_lasso(prob, 0.0, options=opts)


def test_warm_start_shape_checked():
    prob = random_problem(12)
    bad = LassoFit(0.0, np.zeros(5), 0.1, 0, 0.0, 0.0)
    with pytest.raises(ValueError):
        fit_poisson_lasso(prob, 0.1, warm=bad)
