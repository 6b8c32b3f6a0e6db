import numpy as np
import pytest
from scipy.special import expit

from misscomp.rng import substream
from misscomp.synthetic import (ANALYSIS_COLUMNS, CovariateSpec, MissingSpec,
                                OutcomeSpec, ScenarioError, ScenarioSpec,
                                assign_treatment, generate_covariates,
                                generate_missingness, generate_outcome,
                                generate_scenario)

ALL_OUTCOMES = ("Y1.1", "Y1.17", "Y2.11", "Y2.17", "Y4.1", "Y4.17")
ALL_MISSING = ("M1.1", "M2.2", "M2.4", "M2.5", "M2.6", "M2.7", "M2.8", "M3.1")


def test_scenario_registry_is_closed():
    for x in ("X1", "X1.1"):
        CovariateSpec.from_id(x)
    for y in ALL_OUTCOMES:
        OutcomeSpec.from_id(y)
    for m in ALL_MISSING:
        MissingSpec.from_id(m)
    with pytest.raises(ScenarioError):
        CovariateSpec.from_id("X9")
    with pytest.raises(ScenarioError):
        OutcomeSpec.from_id("Y3.14")
    with pytest.raises(ScenarioError):
        MissingSpec.from_id("M0.0")


def test_covariance_matrices_are_positive_definite():
    for x in ("X1", "X1.1"):
        CovariateSpec.from_id(x).cholesky()


def test_covariate_correlations_moderate_n():
    d = generate_covariates(150_000, CovariateSpec.from_id("X1"), substream(1, (0,)))
    xl, zs, zw = d.column("X_latent"), d.column("Z_s"), d.column("Z_w")
    assert np.corrcoef(xl, zs)[0, 1] == pytest.approx(0.4, abs=0.02)
    assert np.corrcoef(xl, zw)[0, 1] == pytest.approx(0.2, abs=0.02)
    assert np.corrcoef(zs, zw)[0, 1] == pytest.approx(0.2, abs=0.02)
    assert d.column("W_s").var() == pytest.approx(1.0, abs=0.03)


def test_x11_strengthens_u_w_correlation():
    d = generate_covariates(150_000, CovariateSpec.from_id("X1.1"), substream(2, (0,)))
    assert np.corrcoef(d.column("U_s"), d.column("W_s"))[0, 1] == pytest.approx(0.8, abs=0.02)
    assert np.corrcoef(d.column("U_w"), d.column("W_w"))[0, 1] == pytest.approx(0.8, abs=0.02)


def test_single_row_generation():
    d = generate_covariates(1, CovariateSpec.from_id("X1"), substream(3, (0,)))
    assert d.n_rows == 1


def test_treatment_thresholding_counts():
    d = generate_covariates(10, CovariateSpec.from_id("X1"), substream(4, (0,)))
    out = assign_treatment(d)
    assert out.column("X").sum() == 4


def test_treatment_all_equal_latent_gives_zero_treated():
    from misscomp.tabular import Column, Dataset
    d = Dataset.build([(Column("X_latent", "continuous"), np.zeros(8))])
    out = assign_treatment(d)
    assert out.column("X").sum() == 0


def test_zero_coefficient_outcome_rate_is_half():
    spec = OutcomeSpec("null", intercept=0.0, treatment_coef=0.0, linear=())
    d = generate_covariates(200_000, CovariateSpec.from_id("X1"), substream(5, (0,)))
    d = assign_treatment(d)
    d = generate_outcome(d, spec, substream(5, (1,)))
    assert d.column("Y").mean() == pytest.approx(0.5, abs=0.004)


def test_analysis_dataset_column_contract():
    sim = generate_scenario(ScenarioSpec.from_ids("X1", "M1.1", "Y1.1"), 500,
                            substream(6, (0,)))
    assert sim.analysis.names == ANALYSIS_COLUMNS
    assert sim.ideal.names == ("Y", "X", "Z_s", "Z_w", "W_s", "W_w")


def test_w_masked_exactly_where_unobserved():
    sim = generate_scenario(ScenarioSpec.from_ids("X1", "M1.1", "Y1.1"), 2000,
                            substream(7, (0,)))
    r = sim.analysis.column("R").astype(bool)
    for name in ("W_s", "W_w"):
        np.testing.assert_array_equal(sim.analysis.mask_of(name), ~r)
    for name in ("Y", "X", "Z_s", "Z_w", "R"):
        assert not sim.analysis.mask_of(name).any()


def test_generation_is_deterministic():
    spec = ScenarioSpec.from_ids("X1", "M2.2", "Y4.1")
    a = generate_scenario(spec, 800, substream(11, ("rep", 0)))
    b = generate_scenario(spec, 800, substream(11, ("rep", 0)))
    np.testing.assert_array_equal(a.analysis.values, b.analysis.values)
    np.testing.assert_array_equal(a.analysis.mask, b.analysis.mask)


def test_m26_with_zero_w_terms_reduces_to_m11():
    m26 = MissingSpec.from_id("M2.6")
    m11 = MissingSpec.from_id("M1.1")
    from dataclasses import replace
    nested = replace(m26, w=(0.0, 0.0), intercept=m11.intercept)
    rng = substream(8, (0,))
    d = generate_covariates(100, CovariateSpec.from_id("X1"), rng)
    frame = {name: d.column(name) for name in d.names}
    x = (frame["X_latent"] < 0).astype(float)
    y = (frame["Z_s"] > 0).astype(float)
    np.testing.assert_allclose(nested.missing_logit(frame, x, y),
                               m11.missing_logit(frame, x, y), atol=1e-14)


def test_missing_rates_moderate_n():
    spec = ScenarioSpec.from_ids("X1", "M1.1", "Y1.1")
    sim = generate_scenario(spec, 100_000, substream(9, (0,)))
    assert sim.analysis.column("R").mean() == pytest.approx(0.60, abs=0.01)
    spec80 = ScenarioSpec.from_ids("X1", "M3.1", "Y1.1")
    sim80 = generate_scenario(spec80, 100_000, substream(9, (1,)))
    assert sim80.analysis.column("R").mean() == pytest.approx(0.20, abs=0.01)


def test_intercept_override_supported():
    spec = OutcomeSpec.from_id("Y1.1", intercept=-6.0)
    assert spec.intercept == -6.0
    m = MissingSpec.from_id("M1.1", intercept=0.5)
    assert m.intercept == 0.5


def test_known_treatment_coefficient():
    for y in ALL_OUTCOMES:
        assert OutcomeSpec.from_id(y).treatment_coef == pytest.approx(np.log(1.5))
