"""The estimator zoo: benchmarks, complete-case, confounded, IPW,
generalized raking, MICE, and IPCW-TMLE variants.

Every estimator maps a simulated dataset to EstimateRecords for the
requested estimands and is a pure function of (data, working models,
options, RNG stream); non-convergence anywhere in the pipeline yields a
non-converged record rather than an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import glm
from .calibration import CalibrationProblem, rake, raking_variance
from .learners import (LearnerFailure, default_library, fit_super_learner,
                       rare_outcome_library, PROB_CLIP)
from .mice import MiceConfig, mice_impute, rubin_pool
from .tabular import Dataset, complete_case_filter, design_matrix_labeled

ESTIMANDS = ("clogOR", "mlogOR", "mlogRR", "mRD")
MARGINAL_ESTIMANDS = ("mlogOR", "mlogRR", "mRD")

PROB_TRUNC = (0.01, 0.99)
Z95 = 1.96

ESTIMATOR_IDS = ("BNMK-C", "BNMK-O", "CC", "CNFD", "IPW", "GR", "MICE",
                 "T-M", "T-MTO", "T-M-a", "T-MTO-a", "T-MTO-r")


@dataclass
class EstimateRecord:
    estimator: str
    estimand: str
    point: float
    ase: float
    ci_low: float
    ci_high: float
    converged: bool
    replicate: int
    detail: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class WorkingModelSpec:
    """Fixed analysis formulas shared by all scenarios of one study."""

    outcome: tuple[str, ...]
    missingness: tuple[str, ...]
    propensity: tuple[str, ...]
    confounded: tuple[str, ...]
    response: str = "Y"
    treat: str = "X"
    select: str = "R"


SYNTHETIC_WORKING = WorkingModelSpec(
    outcome=("X", "Z_s", "Z_w", "W_s", "W_w"),
    missingness=("Y", "X", "Z_s", "Z_w"),
    propensity=("Z_s", "Z_w", "W_s", "W_w"),
    confounded=("X", "Z_s", "Z_w"),
)

PLASMODE_WORKING = WorkingModelSpec(
    outcome=("X", "female", "age10", "age10*age10", "charlson", "anxiety",
             "alcohol", "selfharm", "mh_hosp", "phq8", "phq9"),
    missingness=("Y", "X", "female", "age10", "age10*age10", "charlson",
                 "anxiety", "alcohol", "selfharm", "mh_hosp"),
    propensity=("female", "age10", "age10*age10", "charlson", "anxiety",
                "alcohol", "selfharm", "mh_hosp", "phq8", "phq9"),
    confounded=("X", "female", "age10", "age10*age10", "charlson", "anxiety",
                "alcohol", "selfharm", "mh_hosp"),
)


@dataclass
class DataBundle:
    analysis: Dataset
    ideal: Dataset | None = None
    oracle_formula: tuple[str, ...] | None = None


def validate_request(estimator: str, estimands) -> None:
    if estimator not in ESTIMATOR_IDS:
        raise ValueError(f"unknown estimator {estimator!r}")
    bad = [e for e in estimands if e not in ESTIMANDS]
    if bad:
        raise ValueError(f"unknown estimand {bad[0]!r}")
    if estimator.startswith("T-") and "clogOR" in estimands:
        raise ValueError(f"{estimator} targets marginal estimands only; clogOR is unsupported")


def _nonconverged(estimator, estimands, replicate, detail=None):
    return [EstimateRecord(estimator, e, np.nan, np.nan, np.nan, np.nan, False,
                           replicate, detail or {}) for e in estimands]


def _record(estimator, estimand, point, ase, replicate, detail=None):
    if not np.isfinite(point):
        return EstimateRecord(estimator, estimand, np.nan, np.nan, np.nan, np.nan,
                              False, replicate, detail or {})
    return EstimateRecord(estimator, estimand, float(point), float(ase),
                          float(point - Z95 * ase), float(point + Z95 * ase),
                          True, replicate, detail or {})


def _records_from_fit(estimator, estimands, replicate, fit, data, weights,
                      treat, coef_cov=None, detail=None):
    """Records for any mix of clogOR and marginal estimands from one fit."""
    V = fit.cov if coef_cov is None else coef_cov
    out = []
    marg = None
    if any(e in MARGINAL_ESTIMANDS for e in estimands):
        marg = glm.marginalize(fit, data, weights, treat, cov=V)
    for e in estimands:
        if e == "clogOR":
            j = fit.labels.index(treat)
            out.append(_record(estimator, e, fit.coef[j], np.sqrt(max(V[j, j], 0.0)),
                               replicate, detail))
        else:
            out.append(_record(estimator, e, marg.estimand_values[e], marg.ses[e],
                               replicate, detail))
    return out


# -- simple estimators ----------------------------------------------------


def estimate_benchmark(bundle, working, estimands, rng, replicate, which="census"):
    """Full-data fit of the working model (census) or true formula (oracle)."""
    if bundle.ideal is None:
        raise ValueError("benchmark estimators need the ideal dataset")
    if which == "census":
        formula = working.outcome
    elif which == "oracle-model-formula":
        if bundle.oracle_formula is None:
            raise ValueError("no oracle formula available for this scenario")
        formula = bundle.oracle_formula
    else:
        raise ValueError(f"unknown benchmark flavor {which!r}")
    est = "BNMK-C" if which == "census" else "BNMK-O"
    fit = glm.fit_working_model(bundle.ideal, working.response, formula)
    if not fit.converged:
        return _nonconverged(est, estimands, replicate)
    return _records_from_fit(est, estimands, replicate, fit, bundle.ideal, None,
                             working.treat)


def estimate_cc(bundle, working, estimands, rng, replicate):
    cc = complete_case_filter(bundle.analysis, working.select)
    if cc.n_rows == 0:
        return _nonconverged("CC", estimands, replicate)
    fit = glm.fit_working_model(cc, working.response, working.outcome)
    if not fit.converged:
        return _nonconverged("CC", estimands, replicate)
    return _records_from_fit("CC", estimands, replicate, fit, cc, None, working.treat)


def estimate_cnfd(bundle, working, estimands, rng, replicate):
    d = bundle.analysis
    fit = glm.fit_working_model(d, working.response, working.confounded)
    if not fit.converged:
        return _nonconverged("CNFD", estimands, replicate)
    return _records_from_fit("CNFD", estimands, replicate, fit, d, None, working.treat)


# -- inverse probability weighting ----------------------------------------


def _ipw_weights(analysis, working):
    """Missingness-model fit, truncated observation probabilities, and the
    complete-case base weights; None when the fit fails."""
    selected = analysis.column(working.select) == 1
    if selected.all():
        # nothing is missing: unit weights, no model to fit
        return None, np.ones(analysis.n_rows), selected
    miss_fit = glm.fit_working_model(analysis, working.select, working.missingness)
    if not miss_fit.converged:
        return None
    X_all, _ = design_matrix_labeled(analysis, working.missingness)
    pi = np.clip(glm.predict_mean(miss_fit, X_all), *PROB_TRUNC)
    return miss_fit, pi, selected


def estimate_ipw(bundle, working, estimands, rng, replicate):
    prep = _ipw_weights(bundle.analysis, working)
    if prep is None:
        return _nonconverged("IPW", estimands, replicate)
    _, pi, selected = prep
    cc = bundle.analysis.take(np.flatnonzero(selected))
    base_w = 1.0 / pi[selected]
    fit = glm.fit_working_model(cc, working.response, working.outcome, weights=base_w)
    if not fit.converged:
        return _nonconverged("IPW", estimands, replicate)
    X_cc, _ = design_matrix_labeled(cc, working.outcome)
    sand = glm.sandwich_covariance(fit, X_cc, cc.column(working.response), base_w)
    return _records_from_fit("IPW", estimands, replicate, fit, cc, base_w,
                             working.treat, coef_cov=sand)


# -- generalized raking ----------------------------------------------------


def _eif_auxiliaries(analysis, working, config):
    """Average coefficient EIFs of the working outcome model over imputed
    completions of W; these are phase-one functions usable as raking
    auxiliaries for every cohort member."""
    to_impute = analysis.drop((working.select,))
    result = mice_impute(to_impute, config)
    if len(result.datasets) < 2:
        return None
    acc = None
    used = 0
    for ds in result.datasets:
        fit = glm.fit_working_model(ds, working.response, working.outcome)
        if not fit.converged:
            continue
        X, _ = design_matrix_labeled(ds, working.outcome)
        h = glm.coefficient_eif(fit, X, ds.column(working.response))
        acc = h if acc is None else acc + h
        used += 1
    if used < 2:
        return None
    return acc / used


def estimate_gr(bundle, working, estimands, rng, replicate, aux_config=None,
                aux_override=None):
    analysis = bundle.analysis
    prep = _ipw_weights(analysis, working)
    if prep is None:
        return _nonconverged("GR", estimands, replicate)
    _, pi, selected = prep
    base_w = 1.0 / pi[selected]

    if aux_override is not None:
        aux = np.asarray(aux_override, dtype=float)
    else:
        if aux_config is None:
            aux_config = MiceConfig(m=10, max_iter=25, seed=int(rng.integers(2 ** 63 - 1)))
        aux = _eif_auxiliaries(analysis, working, aux_config)
        if aux is None:
            return _nonconverged("GR", estimands, replicate)

    cal = rake(CalibrationProblem(base_weights=base_w, aux_full=aux, selected=selected))
    if not cal.converged:
        return _nonconverged("GR", estimands, replicate)
    w_cal = cal.multipliers * base_w

    cc = analysis.take(np.flatnonzero(selected))
    fit = glm.fit_working_model(cc, working.response, working.outcome, weights=w_cal)
    if not fit.converged:
        return _nonconverged("GR", estimands, replicate)
    X_cc, _ = design_matrix_labeled(cc, working.outcome)
    rv = raking_variance(fit, cal, aux, base_w, X_cc, cc.column(working.response), selected)
    detail = {"raking_iterations": cal.n_iter, "aux_rank_deficient": rv.aux_rank_deficient}
    return _records_from_fit("GR", estimands, replicate, fit, cc, w_cal,
                             working.treat, coef_cov=rv.cov, detail=detail)


# -- multiple imputation ---------------------------------------------------


def estimate_mice(bundle, working, estimands, rng, replicate, config=None):
    analysis = bundle.analysis
    if config is None:
        config = MiceConfig(m=20, max_iter=25, seed=int(rng.integers(2 ** 63 - 1)))
    result = mice_impute(analysis.drop((working.select,)), config)
    points = {e: [] for e in estimands}
    variances = {e: [] for e in estimands}
    for ds in result.datasets:
        fit = glm.fit_working_model(ds, working.response, working.outcome)
        if not fit.converged:
            continue
        marg = None
        if any(e in MARGINAL_ESTIMANDS for e in estimands):
            marg = glm.marginalize(fit, ds, None, working.treat)
        for e in estimands:
            if e == "clogOR":
                j = fit.labels.index(working.treat)
                points[e].append(fit.coef[j])
                variances[e].append(fit.cov[j, j])
            else:
                points[e].append(marg.estimand_values[e])
                variances[e].append(marg.ses[e] ** 2)
    out = []
    for e in estimands:
        pts = np.asarray(points[e], dtype=float)
        ok = np.isfinite(pts)
        if ok.sum() < 2:
            out.extend(_nonconverged("MICE", [e], replicate))
            continue
        pooled = rubin_pool(pts[ok], np.asarray(variances[e])[ok])
        out.append(_record("MICE", e, pooled.point, np.sqrt(pooled.total_variance),
                           replicate, {"df": pooled.df, "m_used": int(ok.sum()),
                                       "m_failed": result.n_failed}))
    return out


# -- IPCW-TMLE -------------------------------------------------------------


def _sl_or_glm_probs(use_sl, library, feats, d, response, formula, weights, rng,
                     folds, predict_feats=None):
    """Nuisance fit by super learner over raw design features or by GLM."""
    y = d.column(response)
    if use_sl:
        sl = fit_super_learner(library, feats, y, w=weights, folds=folds,
                               seed=int(rng.integers(2 ** 63 - 1)))
        return sl.predict(feats if predict_feats is None else predict_feats), sl
    fit = glm.fit_working_model(d, response, formula, weights=weights)
    if not fit.converged:
        raise LearnerFailure(f"GLM nuisance model for {response} did not converge")
    X, _ = design_matrix_labeled(d, formula)
    return glm.predict_mean(fit, X), fit


def _tmle_design_features(d, formula):
    X, _ = design_matrix_labeled(d, formula)
    return X[:, 1:]


def estimate_tmle(bundle, working, estimands, rng, replicate, estimator_id,
                  sl_scope="all-three", augment=False, rare_library=False, folds=10):
    """Inverse-probability-of-coarsening-weighted TMLE for the marginal
    estimands: fluctuate the initial outcome fit along the treatment-specific
    EIF directions with coarsening and propensity weights, then plug in.
    """
    bad = [e for e in estimands if e not in MARGINAL_ESTIMANDS]
    if bad:
        raise ValueError(f"{estimator_id} cannot target {bad[0]}")
    analysis = bundle.analysis
    n = analysis.n_rows
    library = default_library()
    out_library = rare_outcome_library() if rare_library else library

    try:
        aug_col = None
        if augment:
            cfd = glm.fit_working_model(analysis, working.response, working.confounded)
            if not cfd.converged:
                return _nonconverged(estimator_id, estimands, replicate)
            X_cfd, _ = design_matrix_labeled(analysis, working.confounded)
            aug_col = glm.predict_mean(cfd, X_cfd)

        miss_feats = _tmle_design_features(analysis, working.missingness)
        if aug_col is not None:
            miss_feats = np.column_stack([miss_feats, aug_col])
        sl_pi = fit_super_learner(library, miss_feats, analysis.column(working.select),
                                  folds=folds, seed=int(rng.integers(2 ** 63 - 1)))
        pi = np.clip(sl_pi.predict(miss_feats), *PROB_TRUNC)

        selected = analysis.column(working.select) == 1
        cc_rows = np.flatnonzero(selected)
        cc = analysis.take(cc_rows)
        d_w = 1.0 / pi[selected]
        x_cc = cc.column(working.treat)
        y_cc = cc.column(working.response)

        use_sl = sl_scope == "all-three"
        g_hat, _ = _sl_or_glm_probs(use_sl, library,
                                    _tmle_design_features(cc, working.propensity),
                                    cc, working.treat, working.propensity, d_w, rng, folds)
        g_hat = np.clip(g_hat, *PROB_TRUNC)

        X_out_full, out_labels = design_matrix_labeled(cc, working.outcome)
        out_feats = X_out_full[:, 1:]
        if aug_col is not None:
            out_feats = np.column_stack([out_feats, aug_col[selected]])
        if use_sl:
            sl_q = fit_super_learner(out_library, out_feats, y_cc, w=d_w, folds=folds,
                                     seed=int(rng.integers(2 ** 63 - 1)))
            treat_j = out_labels.index(working.treat) - 1  # features drop the intercept
            f1 = out_feats.copy(); f1[:, treat_j] = 1.0
            f0 = out_feats.copy(); f0[:, treat_j] = 0.0
            q_obs, q1, q0 = sl_q.predict(out_feats), sl_q.predict(f1), sl_q.predict(f0)
        else:
            qfit = glm.fit_working_model(cc, working.response, working.outcome, weights=d_w)
            if not qfit.converged:
                return _nonconverged(estimator_id, estimands, replicate)
            q_obs = glm.predict_mean(qfit, X_out_full)
            X1, _ = design_matrix_labeled(cc.with_values(working.treat, np.ones(cc.n_rows)),
                                          working.outcome)
            X0, _ = design_matrix_labeled(cc.with_values(working.treat, np.zeros(cc.n_rows)),
                                          working.outcome)
            q1, q0 = glm.predict_mean(qfit, X1), glm.predict_mean(qfit, X0)
    except LearnerFailure:
        return _nonconverged(estimator_id, estimands, replicate)

    clip_lo, clip_hi = PROB_CLIP, 1.0 - PROB_CLIP
    q_obs, q1, q0 = (np.clip(q, clip_lo, clip_hi) for q in (q_obs, q1, q0))

    h1 = x_cc
    h0 = 1.0 - x_cc
    fluct_w = (h1 / g_hat + h0 / (1.0 - g_hat)) * d_w
    fluct = glm.fit_glm(np.column_stack([h1, h0]), y_cc, weights=fluct_w,
                        offset=logit(q_obs))
    if not fluct.converged:
        return _nonconverged(estimator_id, estimands, replicate)
    eps1, eps0 = fluct.coef
    q1s = expit(logit(q1) + eps1)
    q0s = expit(logit(q0) + eps0)
    qxs = np.where(x_cc == 1, q1s, q0s)

    mu1 = float(np.sum(d_w * q1s) / n)
    mu0 = float(np.sum(d_w * q0s) / n)
    score1 = float(np.sum(d_w * (h1 / g_hat) * (y_cc - qxs)) / n)
    score0 = float(np.sum(d_w * (h0 / (1.0 - g_hat)) * (y_cc - qxs)) / n)

    ic = np.zeros((n, 2))
    ic[cc_rows, 0] = d_w * ((h1 / g_hat) * (y_cc - q1s) + q1s)
    ic[cc_rows, 1] = d_w * ((h0 / (1.0 - g_hat)) * (y_cc - q0s) + q0s)
    ic[:, 0] -= mu1
    ic[:, 1] -= mu0
    mu_cov = ic.T @ ic / n ** 2

    detail = {"epsilon": (float(eps1), float(eps0)),
              "fluctuation_score": (score1, score0), "mu1": mu1, "mu0": mu0}
    out = []
    ratio_ok = 0.0 < mu0 < 1.0 and 0.0 < mu1 < 1.0
    for e in estimands:
        if e == "mRD":
            grad = np.array([1.0, -1.0])
            point = mu1 - mu0
        elif not ratio_ok:
            out.extend(_nonconverged(estimator_id, [e], replicate, detail))
            continue
        elif e == "mlogRR":
            grad = np.array([1.0 / mu1, -1.0 / mu0])
            point = np.log(mu1 / mu0)
        else:  # mlogOR
            grad = np.array([1.0 / (mu1 * (1 - mu1)), -1.0 / (mu0 * (1 - mu0))])
            point = logit(mu1) - logit(mu0)
        ase = float(np.sqrt(max(grad @ mu_cov @ grad, 0.0)))
        out.append(_record(estimator_id, e, point, ase, replicate, detail))
    return out


# -- registry ---------------------------------------------------------------


def run_estimator(estimator: str, bundle: DataBundle, working: WorkingModelSpec,
                  estimands, rng, replicate: int) -> list[EstimateRecord]:
    validate_request(estimator, estimands)
    estimands = tuple(estimands)
    if estimator == "BNMK-C":
        return estimate_benchmark(bundle, working, estimands, rng, replicate, "census")
    if estimator == "BNMK-O":
        return estimate_benchmark(bundle, working, estimands, rng, replicate,
                                  "oracle-model-formula")
    if estimator == "CC":
        return estimate_cc(bundle, working, estimands, rng, replicate)
    if estimator == "CNFD":
        return estimate_cnfd(bundle, working, estimands, rng, replicate)
    if estimator == "IPW":
        return estimate_ipw(bundle, working, estimands, rng, replicate)
    if estimator == "GR":
        return estimate_gr(bundle, working, estimands, rng, replicate)
    if estimator == "MICE":
        return estimate_mice(bundle, working, estimands, rng, replicate)
    scope = "missingness-only" if estimator.startswith("T-M-") or estimator == "T-M" else "all-three"
    if estimator in ("T-M", "T-MTO"):
        return estimate_tmle(bundle, working, estimands, rng, replicate, estimator,
                             sl_scope=scope)
    if estimator in ("T-M-a", "T-MTO-a"):
        return estimate_tmle(bundle, working, estimands, rng, replicate, estimator,
                             sl_scope=scope, augment=True)
    if estimator == "T-MTO-r":
        return estimate_tmle(bundle, working, estimands, rng, replicate, estimator,
                             sl_scope="all-three", rare_library=True)
    raise ValueError(f"unknown estimator {estimator!r}")
