import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1lrtree import l1lr
from l1lrtree.data import DataError, Dataset, FeatureColumn, build_design, stratified_folds
from l1lrtree.synth import single_signal_spec, synth_generate
from oracles import newton_logistic, penalized_objective


def numeric_design(X, y):
    cols = tuple(FeatureColumn.numeric(f"x{j}", X[:, j]) for j in range(X.shape[1]))
    ds = Dataset(cols, np.asarray(y))
    return ds, build_design(ds, ds.feature_names)


def logistic_problem(rng, n, q, scale=1.0):
    X = rng.normal(size=(n, q))
    beta = rng.normal(scale=scale, size=q)
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ beta)))).astype(int)
    y[0], y[1] = 0, 1
    return X, y


# ---------------------------------------------------------------- likelihood


def test_log_likelihood_zero_model():
    ds, d = numeric_design(np.array([[1.0], [2.0], [3.0]]), [0, 1, 0])
    m = l1lr.fit(d, ds.target, 10.0)
    zero = l1lr.RegularizedLogisticModel(0.0, 0.0, np.zeros(1), d.column_map, d.means, d.sds)
    assert l1lr.log_likelihood(zero, d, ds.target) == pytest.approx(-math.log(2), abs=1e-15)
    assert m.coefficients.tolist() == [0.0]


def test_log_likelihood_closed_form():
    X = np.zeros((10, 1))
    assert l1lr.log_likelihood_arrays(math.log(3), np.zeros(1), X, np.ones(10)) == pytest.approx(
        math.log(0.75), abs=1e-14)


def test_log_likelihood_direct_sum():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 3))
    y = rng.integers(0, 2, 7).astype(float)
    b0, b = 0.3, rng.normal(size=3)
    direct = sum(yi * (b0 + xi @ b) - math.log(1 + math.exp(b0 + xi @ b)) for xi, yi in zip(X, y)) / 7
    assert l1lr.log_likelihood_arrays(b0, b, X, y) == pytest.approx(direct, abs=1e-12)


def test_log_likelihood_overflow_safe():
    X = np.array([[1.0], [-1.0]])
    val = l1lr.log_likelihood_arrays(0.0, np.array([800.0]), X, np.array([1.0, 0.0]))
    assert math.isfinite(val) and val == pytest.approx(0.0, abs=1e-300)


# ---------------------------------------------------------------- predict


def test_predict_zero_and_intercept():
    zero = l1lr.RegularizedLogisticModel(0.0, 0.0, np.zeros(2), (("a", None), ("b", None)),
                                         np.zeros(2), np.ones(2))
    assert l1lr.predict_proba(zero, [3.0, -1.0]) == 0.5
    two = l1lr.RegularizedLogisticModel(0.0, 2.0, np.zeros(2), zero.column_map, zero.means, zero.sds)
    assert l1lr.predict_proba(two, [0.0, 0.0]) == pytest.approx(math.exp(2) / (1 + math.exp(2)), abs=1e-15)


def test_destandardized_predictions_agree():
    rng = np.random.default_rng(1)
    X, y = logistic_problem(rng, 80, 4)
    X = X * [1.0, 10.0, 0.1, 3.0] + [5.0, -2.0, 0.0, 100.0]
    ds, d = numeric_design(X, y)
    m = l1lr.fit(d, ds.target, 0.01)
    std = l1lr.predict_proba(m, d.matrix)
    raw = l1lr.predict_proba_raw(m, d.raw)
    assert np.max(np.abs(std - raw)) < 1e-10


def test_predict_monotone_in_coefficient_sign():
    rng = np.random.default_rng(2)
    X, y = logistic_problem(rng, 60, 3, 2.0)
    ds, d = numeric_design(X, y)
    m = l1lr.fit(d, ds.target, 0.005)
    base = np.zeros(3)
    for j in range(3):
        up = base.copy()
        up[j] = 1.0
        diff = l1lr.predict_proba(m, up) - l1lr.predict_proba(m, base)
        assert np.sign(diff) == np.sign(m.coefficients[j])


# ---------------------------------------------------------------- grid


def test_lambda_grid_shape():
    rng = np.random.default_rng(3)
    X, y = logistic_problem(rng, 50, 5)
    ds, d = numeric_design(X, y)
    g = l1lr.lambda_grid(d, ds.target)
    assert len(g) == 100
    assert np.all(np.diff(g) < 0)
    r = g[1:] / g[:-1]
    assert np.max(np.abs(r - r[0])) < 1e-12
    assert g[-1] == pytest.approx(1e-3 * g[0], rel=1e-12)


def test_lambda_max_gives_null_model():
    rng = np.random.default_rng(4)
    X, y = logistic_problem(rng, 40, 6)
    ds, d = numeric_design(X, y)
    lmax = l1lr.lambda_max(d, ds.target)
    m = l1lr.fit(d, ds.target, lmax)
    pbar = y.mean()
    assert np.all(m.coefficients == 0.0)
    assert m.intercept == pytest.approx(math.log(pbar / (1 - pbar)), abs=1e-9)
    # just below the bound something enters
    m2 = l1lr.fit(d, ds.target, 0.99 * lmax)
    assert np.count_nonzero(m2.coefficients) >= 1


def test_all_constant_design_rejected():
    ds = Dataset((FeatureColumn.numeric("a", [1.0, 2.0, 3.0]),), np.array([0, 1, 0]))
    d = build_design(ds, ["a"])
    d0 = type(d)(d.matrix[:, :0], d.raw[:, :0], (), d.means[:0], d.sds[:0], True)
    with pytest.raises(DataError, match="constant"):
        l1lr.lambda_grid(d0, ds.target)


# ---------------------------------------------------------------- optimality


def test_matches_newton_at_zero_penalty():
    rng = np.random.default_rng(5)
    X, y = logistic_problem(rng, 50, 2)
    ds, d = numeric_design(X, y)
    m = l1lr.fit(d, ds.target, 0.0)
    b0, b = newton_logistic(d.matrix, y.astype(float))
    assert m.intercept == pytest.approx(b0, abs=1e-5)
    assert np.max(np.abs(m.coefficients - b)) < 1e-5


def test_objective_matches_brute_force_grid():
    rng = np.random.default_rng(6)
    X, y = logistic_problem(rng, 40, 2, 1.5)
    ds, d = numeric_design(X, y)
    lam = l1lr.lambda_max(d, ds.target) / 2
    m = l1lr.fit(d, ds.target, lam)
    f_fit = penalized_objective(m.intercept, m.coefficients, d.matrix, y, lam)
    # coarse global grid over [-5, 5]^3 then a 0.01 grid around its best cell
    Xm, yf = d.matrix, y.astype(float)

    def grid_min(c0, c1, c2):
        B0, B1, B2 = np.meshgrid(c0, c1, c2, indexing="ij")
        eta = B0[..., None] + B1[..., None] * Xm[:, 0] + B2[..., None] * Xm[:, 1]
        F = np.mean(np.logaddexp(0, eta) - yf * eta, axis=-1) + lam * (np.abs(B1) + np.abs(B2))
        k = np.unravel_index(np.argmin(F), F.shape)
        return F[k], (B0[k], B1[k], B2[k])

    coarse = np.round(np.arange(-5, 5.0001, 0.1), 10)
    _, (a, b, c) = grid_min(coarse, coarse, coarse)
    fine = lambda v: np.round(np.arange(v - 0.3, v + 0.30001, 0.01), 10)
    f_grid, _ = grid_min(fine(a), fine(b), fine(c))
    assert f_fit <= f_grid + 1e-12
    # within the objective change one 0.01 step can make
    assert f_grid - f_fit < 2e-3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(10, 60), st.integers(1, 8), st.floats(0.01, 1.0))
def test_kkt_property(seed, n, q, frac):
    rng = np.random.default_rng(seed)
    X, y = logistic_problem(rng, n, q)
    ds, d = numeric_design(X, y)
    lam = frac * l1lr.lambda_max(d, ds.target)
    m = l1lr.fit(d, ds.target, lam)
    assert m.converged
    assert l1lr.kkt_residual(m, d, ds.target) <= 1e-6


def test_objective_monotone_trace():
    rng = np.random.default_rng(7)
    X, y = logistic_problem(rng, 60, 8, 2.0)
    ds, d = numeric_design(X, y)
    for lam in (0.001, 0.01, 0.1):
        m = l1lr.fit(d, ds.target, lam)
        tr = m.objective_trace
        assert len(tr) >= 1
        assert np.all(np.diff(tr) <= 1e-13 * np.abs(tr[:-1]))


def test_separation_flagged_with_warning():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    ds, d = numeric_design(X, [0, 0, 1, 1])
    with pytest.warns(l1lr.SeparationWarning):
        m = l1lr.fit(d, ds.target, 0.0)
    assert m.separated or m.capped
    assert np.max(np.abs(m.coefficients)) <= l1lr.BETA_CAP
    p = l1lr.predict_proba(m, d.matrix)
    assert np.all(np.abs(p - ds.target) < l1lr.SEPARATION_GAP)


def test_non_convergence_reported():
    rng = np.random.default_rng(8)
    X, y = logistic_problem(rng, 60, 8, 2.0)
    ds, d = numeric_design(X, y)
    with pytest.warns(l1lr.ConvergenceWarning, match="KKT residual"):
        m = l1lr.fit(d, ds.target, 1e-4, tol=1e-14, max_iter=2)
    assert not m.converged


def test_fit_rejects_single_class():
    rng = np.random.default_rng(9)
    X, y = logistic_problem(rng, 20, 2)
    ds, d = numeric_design(X, y)
    with pytest.raises(DataError):
        l1lr.fit(d, np.ones(20), 0.1)


def test_warm_start_same_solution():
    rng = np.random.default_rng(10)
    X, y = logistic_problem(rng, 70, 5)
    ds, d = numeric_design(X, y)
    grid = l1lr.lambda_grid(d, ds.target)
    a = l1lr.fit_at(d, ds.target, grid, 40)
    b = l1lr.fit(d, ds.target, grid[40])
    assert np.max(np.abs(a.coefficients - b.coefficients)) < 1e-5


# ---------------------------------------------------------------- selection


def test_selected_features_group_collapse():
    cmap = (("Age", None), ("Serology", "Negative"), ("Serology", "Positive"))
    m = l1lr.RegularizedLogisticModel(0.1, 0.0, np.array([0.0, 0.0, 0.4]), cmap, np.zeros(3), np.ones(3))
    assert l1lr.selected_features(m) == ["Serology"]
    z = l1lr.RegularizedLogisticModel(0.1, 0.0, np.zeros(3), cmap, np.zeros(3), np.ones(3))
    assert l1lr.selected_features(z) == []


def test_dump_is_destandardized():
    rng = np.random.default_rng(11)
    X, y = logistic_problem(rng, 60, 2)
    ds, d = numeric_design(X * 10 + 3, y)
    m = l1lr.fit(d, ds.target, 0.01)
    rec = m.dump()
    assert rec["lambda"] == 0.01
    raw = rec["intercept"] + sum(rec.get(f"x{j}", 0.0) * d.raw[:, j] for j in range(2))
    assert np.allclose(1 / (1 + np.exp(-raw)), l1lr.predict_proba(m, d.matrix), atol=1e-10)


# ---------------------------------------------------------------- cross-validation


def _cv_for(ds, K, seed=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = build_design(ds, ds.feature_names)
        grid = l1lr.lambda_grid(d, ds.target)
        return d, l1lr.cv_lambda(d, ds.target, stratified_folds(ds, K, seed), grid)


def test_cv_curve_invariants():
    rng = np.random.default_rng(12)
    X, y = logistic_problem(rng, 120, 6)
    ds, _ = numeric_design(X, y)
    _, cv = _cv_for(ds, 12)
    assert cv.lambda_1se >= cv.lambda_min
    i_min, i_1se = cv.index_min, cv.index_1se
    assert cv.mean_error[i_1se] <= cv.mean_error[i_min] + cv.se_error[i_min]
    # largest penalty among minima and within one standard error
    assert i_min == int(np.flatnonzero(cv.mean_error == cv.mean_error.min())[0])
    assert np.all(cv.mean_error[:i_1se] > cv.mean_error[i_min] + cv.se_error[i_min])


def test_cv_squared_error_by_hand():
    rng = np.random.default_rng(13)
    X, y = logistic_problem(rng, 40, 2)
    ds, d = numeric_design(X, y)
    folds = stratified_folds(ds, 4, 1)
    grid = l1lr.lambda_grid(d, ds.target, n_lambda=5)
    cv = l1lr.cv_lambda(d, ds.target, folds, grid)
    # recompute the error at the third penalty fold by fold
    errs = []
    for k in range(4):
        tr, te = folds.train_test(k)
        sub = ds.take(tr)
        dk = build_design(sub, sub.feature_names)
        m = l1lr.fit(dk, sub.target, grid[2])
        p = l1lr.predict_proba_raw(m, d.raw[te])
        errs.append(np.mean((p - y[te]) ** 2))
    assert cv.mean_error[2] == pytest.approx(np.mean(errs), abs=1e-6)
    assert cv.se_error[2] == pytest.approx(np.std(errs, ddof=1) / 2, abs=1e-6)


def test_cv_leave_one_out_degenerate():
    rng = np.random.default_rng(14)
    X, y = logistic_problem(rng, 30, 3)
    y[:15], y[15:] = 0, 1
    ds, _ = numeric_design(X, y)
    _, cv = _cv_for(ds, 15)
    assert np.all(np.isfinite(cv.se_error))


def test_fold_lacking_class_rejected():
    rng = np.random.default_rng(15)
    X, y = logistic_problem(rng, 20, 2)
    ds, d = numeric_design(X, y)
    bad = type(stratified_folds(ds, 2, 0))(np.where(y == 1, 0, 1), 2, 0)
    with pytest.raises(DataError, match="lacks a class"):
        l1lr.cv_lambda(d, ds.target, bad, l1lr.lambda_grid(d, ds.target, 5))


@pytest.mark.slow
def test_one_signal_among_noise_selected():
    hits = 0
    for seed in range(20):
        ds = synth_generate(single_signal_spec(500, seed))
        d, cv = _cv_for(ds, 50, seed)
        m = l1lr.fit_at(d, ds.target, cv.lambda_grid, cv.index_1se)
        sel = l1lr.selected_features(m)
        hits += "Signal" in sel and len(sel) - 1 <= 2
    assert hits >= 19
