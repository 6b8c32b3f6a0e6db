import math

import numpy as np
import pytest
from scipy.special import expit

from misscomp.glm import (GlmFit, coefficient_eif, fit_glm, fit_working_model,
                          marginalize, predict_mean, sandwich_covariance)
from misscomp.tabular import Column, Dataset


def _saturated_2x2():
    # 40 per arm; 10 events at x=0, 20 events at x=1
    x = np.r_[np.zeros(40), np.ones(40)]
    y = np.r_[np.ones(10), np.zeros(30), np.ones(20), np.zeros(20)]
    return np.column_stack([np.ones(80), x]), y


def test_saturated_logistic_recovers_log_odds_ratio():
    X, y = _saturated_2x2()
    fit = fit_glm(X, y)
    assert fit.converged
    assert fit.coef[1] == pytest.approx(math.log(3.0), abs=1e-10)


def test_all_zero_response_flags_nonconvergence():
    X = np.ones((30, 1))
    fit = fit_glm(X, np.zeros(30))
    assert not fit.converged


def test_weight_scale_invariance():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(200), rng.standard_normal(200)])
    y = (rng.random(200) < expit(X @ [0.2, 0.7])).astype(float)
    w = rng.random(200) + 0.5
    f1 = fit_glm(X, y, weights=w)
    f2 = fit_glm(X, y, weights=17.3 * w)
    np.testing.assert_allclose(f1.coef, f2.coef, atol=1e-9)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        fit_glm(np.ones((5, 2)), np.zeros(4))
    with pytest.raises(ValueError):
        fit_glm(np.ones((5, 2)), np.zeros(5), weights=np.ones(4))


def test_gaussian_family_matches_least_squares():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(100), rng.standard_normal(100)])
    y = X @ [1.0, -2.0] + rng.standard_normal(100)
    fit = fit_glm(X, y, family="gaussian-identity")
    expected, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(fit.coef, expected, atol=1e-10)


def test_poisson_intercept_only_is_log_mean():
    y = np.array([0.0, 1.0, 2.0, 3.0, 6.0])
    fit = fit_glm(np.ones((5, 1)), y, family="poisson-log")
    assert fit.coef[0] == pytest.approx(math.log(y.mean()), abs=1e-8)


def test_predict_intercept_only_is_half():
    fit = fit_glm(np.ones((10, 1)), np.r_[np.ones(5), np.zeros(5)])
    np.testing.assert_allclose(predict_mean(fit, np.ones((3, 1))), 0.5, atol=1e-9)


def test_predict_expit_of_log_odds():
    fit = GlmFit("binomial-logit", np.array([0.0, math.log(1.5)]), np.eye(2),
                 True, 0.0, 0, 0.0)
    assert predict_mean(fit, np.array([[1.0, 1.0]]))[0] == pytest.approx(0.6)


def test_predict_monotone_in_positive_coefficient():
    fit = GlmFit("binomial-logit", np.array([-0.3, 0.8]), np.eye(2), True, 0.0, 0, 0.0)
    grid = np.column_stack([np.ones(50), np.linspace(-3, 3, 50)])
    assert np.all(np.diff(predict_mean(fit, grid)) > 0)


def test_predict_column_mismatch():
    fit = fit_glm(np.ones((10, 1)), np.r_[np.ones(5), np.zeros(5)])
    with pytest.raises(ValueError):
        predict_mean(fit, np.ones((3, 2)))


# -- influence functions -----------------------------------------------------


def _random_fit(n=200, seed=5):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal(n), rng.standard_normal(n)])
    y = (rng.random(n) < expit(X @ [-0.5, 0.8, -0.4])).astype(float)
    w = rng.random(n) + 0.5
    return X, y, w, fit_glm(X, y, weights=w)


def test_eif_weighted_column_sums_vanish():
    # the rows already carry the fit weights: their plain column sums are the
    # rotated score equations
    X, y, w, fit = _random_fit()
    eif = coefficient_eif(fit, X, y, w)
    assert np.max(np.abs(eif.sum(axis=0))) < 1e-8


def test_eif_intercept_only_hand_formula():
    rng = np.random.default_rng(7)
    y = (rng.random(150) < 0.3).astype(float)
    X = np.ones((150, 1))
    fit = fit_glm(X, y)
    eif = coefficient_eif(fit, X, y)
    ybar = y.mean()
    np.testing.assert_allclose(eif[:, 0], (y - ybar) / (ybar * (1 - ybar)), atol=1e-7)


def _jackknife_errors(n, seed=5):
    X, y, w, fit = _random_fit(n=n, seed=seed)
    eif = coefficient_eif(fit, X, y, w)
    idx = np.arange(n)
    deltas, approx = [], []
    for i in range(0, n, n // 20):
        keep = idx != i
        loo = fit_glm(X[keep], y[keep], weights=w[keep])
        deltas.append(fit.coef - loo.coef)
        approx.append(eif[i] / n)
    deltas = np.array(deltas)
    err = np.array(approx) - deltas
    rms = lambda a: float(np.sqrt(np.mean(a ** 2)))
    return rms(deltas), rms(err)


def test_eif_approximates_jackknife_to_second_order():
    d200, e200 = _jackknife_errors(200)
    d400, e400 = _jackknife_errors(400)
    # first-order agreement, and the residual decays ~1/n^2 vs the ~1/n effect
    assert e200 < 0.12 * d200
    assert e400 < 0.12 * d400
    assert e400 / e200 < 0.5


# -- marginalization ----------------------------------------------------------


def _outcome_dataset(n=500, seed=11, bx=0.5):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    x = (rng.random(n) < 0.4).astype(float)
    y = (rng.random(n) < expit(-1.0 + bx * x + 0.6 * z)).astype(float)
    return Dataset.build([
        (Column("Y", "binary"), y), (Column("X", "binary"), x),
        (Column("Z", "continuous"), z),
    ])


def test_marginalize_null_treatment_coefficient():
    d = _outcome_dataset()
    fit = fit_working_model(d, "Y", ("X", "Z"))
    fit.coef = fit.coef.copy()
    fit.coef[fit.labels.index("X")] = 0.0
    marg = marginalize(fit, d, None, "X")
    assert marg.estimand_values["mRD"] == 0.0
    assert marg.estimand_values["mRR"] == pytest.approx(1.0, abs=1e-14)
    assert marg.estimand_values["mOR"] == pytest.approx(1.0, abs=1e-14)


def test_marginal_log_identities():
    d = _outcome_dataset(seed=12)
    fit = fit_working_model(d, "Y", ("X", "Z"))
    marg = marginalize(fit, d, None, "X")
    assert math.exp(marg.estimand_values["mlogOR"]) == pytest.approx(
        marg.estimand_values["mOR"], rel=1e-12)
    assert math.exp(marg.estimand_values["mlogRR"]) == pytest.approx(
        marg.estimand_values["mRR"], rel=1e-12)
    assert marg.estimand_values["mRD"] == pytest.approx(marg.mu1 - marg.mu0, abs=1e-15)


def test_marginalize_weighted_mean_reproduction():
    # intercept-only fit reproduces the weighted response mean exactly
    d = _outcome_dataset(seed=13)
    rng = np.random.default_rng(3)
    w = rng.random(d.n_rows) + 0.2
    fit = fit_working_model(d, "Y", ("X",), weights=w)
    X, _ = (np.column_stack([np.ones(d.n_rows), d.column("X")]), None)
    preds = predict_mean(fit, X)
    assert np.average(preds, weights=w) == pytest.approx(
        np.average(d.column("Y"), weights=w), abs=1e-9)


def delta_gradient_check(seed):
    """Shared oracle: delta-method SEs against central finite differences."""
    d = _outcome_dataset(seed=seed)
    fit = fit_working_model(d, "Y", ("X", "Z"))
    marg = marginalize(fit, d, None, "X")
    h = 1e-5
    X1, _ = (None, None)
    from misscomp.tabular import design_matrix
    n = d.n_rows
    results = {}
    for name in ("mRD", "mlogRR", "mlogOR"):
        grad_fd = np.zeros(fit.p)
        for j in range(fit.p):
            vals = []
            for sign in (+1, -1):
                coef = fit.coef.copy()
                coef[j] += sign * h
                shifted = GlmFit(fit.family, coef, fit.cov, True, 0.0, n, n,
                                 formula=fit.formula, labels=fit.labels)
                m = marginalize(shifted, d, None, "X")
                vals.append(m.estimand_values[name])
            grad_fd[j] = (vals[0] - vals[1]) / (2 * h)
        se_fd = float(np.sqrt(grad_fd @ fit.cov @ grad_fd))
        results[name] = (se_fd, marg.ses[name])
    return results


@pytest.mark.parametrize("seed", [21, 22, 23])
def test_delta_method_matches_finite_differences(seed):
    for name, (se_fd, se_delta) in delta_gradient_check(seed).items():
        assert se_delta == pytest.approx(se_fd, rel=1e-4), name


def test_marginalize_flags_degenerate_means():
    d = _outcome_dataset(seed=14)
    fit = fit_working_model(d, "Y", ("X", "Z"))
    fit.coef = fit.coef.copy()
    fit.coef[0] = 40.0  # pushes every prediction to 1
    marg = marginalize(fit, d, None, "X")
    assert not marg.ratio_defined
    assert math.isnan(marg.estimand_values["mOR"])
    assert math.isfinite(marg.estimand_values["mRD"])


def test_sandwich_covariance_positive_definite():
    X, y, w, fit = _random_fit(seed=31)
    V = sandwich_covariance(fit, X, y, w)
    assert np.all(np.linalg.eigvalsh(0.5 * (V + V.T)) > 0)
