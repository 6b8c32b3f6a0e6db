"""Monte-Carlo truth values (oracle and census flavors) and aggregation of
replicate records into performance metrics.

Oracle values are functionals of the generating distribution alone
(plug-in over large draws, or direct coefficient read-off for the
conditional log odds ratio); census values project the truth onto the
fixed working regression model by fitting it to ideal large-sample data.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from . import glm
from .estimators import (EstimateRecord, WorkingModelSpec, SYNTHETIC_WORKING,
                         PLASMODE_WORKING, Z95)
from .plasmode import (PlasmodeModels, PlasmodeRef, default_models,
                       generate_plasmode, synth_cohort, MODEL_TERMS)
from .rng import substream
from .synthetic import COVARIATE_ORDER, ScenarioSpec, TREATED_FRACTION
from .tabular import Column, Dataset, design_matrix_labeled

TRUTH_CHUNK = 250_000
FLAVORS = ("oracle", "census")


@dataclass
class TruthValue:
    scenario_id: str
    estimand: str
    flavor: str
    value: float
    mc_draws: int
    mc_se: float


def _synthetic_frame(spec: ScenarioSpec, draws: int, seed: int) -> dict:
    """Raw covariate arrays plus treatment, generated in fixed-order chunks."""
    L = spec.covariates.cholesky()
    k = len(COVARIATE_ORDER)
    parts = []
    start = 0
    chunk_no = 0
    while start < draws:
        m = min(TRUTH_CHUNK, draws - start)
        rng = substream(seed, ("truth-chunk", chunk_no))
        parts.append(rng.standard_normal((m, k)) @ L.T)
        start += m
        chunk_no += 1
    raw = np.vstack(parts)
    frame = {name: raw[:, j] for j, name in enumerate(COVARIATE_ORDER)}
    threshold = np.percentile(frame["X_latent"], 100 * TREATED_FRACTION)
    frame["X"] = (frame["X_latent"] < threshold).astype(float)
    return frame


def _ideal_dataset(frame: dict, y: np.ndarray) -> Dataset:
    cols = [(Column("Y", "binary"), y), (Column("X", "binary"), frame["X"])]
    for name in ("Z_s", "Z_w", "W_s", "W_w"):
        cols.append((Column(name, "continuous"), frame[name]))
    return Dataset.build(cols)


def _marginal_value(estimand: str, mu1: float, mu0: float) -> float:
    if estimand == "mRD":
        return mu1 - mu0
    if estimand == "mlogRR":
        return float(np.log(mu1 / mu0))
    if estimand == "mlogOR":
        return float(np.log(mu1 / (1 - mu1)) - np.log(mu0 / (1 - mu0)))
    if estimand == "mRR":
        return mu1 / mu0
    if estimand == "mOR":
        return (mu1 / (1 - mu1)) / (mu0 / (1 - mu0))
    raise ValueError(f"unknown marginal estimand {estimand!r}")


def _census_value(d: Dataset, working: WorkingModelSpec, estimand: str) -> float:
    fit = glm.fit_working_model(d, working.response, working.outcome)
    if not fit.converged:
        raise RuntimeError("census working-model fit did not converge")
    if estimand == "clogOR":
        return float(fit.coef[fit.labels.index(working.treat)])
    marg = glm.marginalize(fit, d, None, working.treat)
    return float(marg.estimand_values[estimand])


def _oracle_marginal(spec_lp, frame, estimand, rows=slice(None)) -> float:
    sub = {k: v[rows] for k, v in frame.items()}
    mu1 = float(np.mean(expit(spec_lp(sub, np.ones_like(sub["X"])))))
    mu0 = float(np.mean(expit(spec_lp(sub, np.zeros_like(sub["X"])))))
    return _marginal_value(estimand, mu1, mu0)


def compute_truth(scenario, estimand: str, flavor: str, draws: int, seed: int,
                  working: WorkingModelSpec | None = None,
                  models: PlasmodeModels | None = None) -> TruthValue:
    """Monte-Carlo truth for one scenario x estimand x flavor.

    `scenario` is a synthetic ScenarioSpec or a PlasmodeRef. The MC standard
    error comes from a split-half repetition of the same computation.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}")
    if draws < 10 ** 5:
        raise ValueError("truth computation needs at least 1e5 draws")
    if isinstance(scenario, ScenarioSpec):
        return _synthetic_truth(scenario, estimand, flavor, draws, seed,
                                working or SYNTHETIC_WORKING)
    if isinstance(scenario, PlasmodeRef):
        return _plasmode_truth(scenario, estimand, flavor, draws, seed,
                               working or PLASMODE_WORKING,
                               models or default_models())
    raise TypeError(f"unsupported scenario {scenario!r}")


def _synthetic_truth(spec, estimand, flavor, draws, seed, working) -> TruthValue:
    sid = spec.scenario_id
    if flavor == "oracle" and estimand == "clogOR":
        # the treatment effect is additive on the logit scale in every
        # generating model, so the conditional log-OR is its coefficient
        return TruthValue(sid, estimand, "oracle", spec.outcome.treatment_coef,
                          draws, 1e-12)
    frame = _synthetic_frame(spec, draws, seed)
    lp = spec.outcome.linear_predictor
    half = draws // 2
    halves = (slice(0, half), slice(half, draws))
    if flavor == "oracle":
        value = _oracle_marginal(lp, frame, estimand)
        v1, v2 = (_oracle_marginal(lp, frame, estimand, rows) for rows in halves)
    else:
        rng = substream(seed, ("truth-outcome",))
        y = (rng.random(draws) < expit(lp(frame, frame["X"]))).astype(float)
        d = _ideal_dataset(frame, y)
        value = _census_value(d, working, estimand)
        v1, v2 = (_census_value(d.take(np.arange(draws)[rows]), working, estimand)
                  for rows in halves)
    return TruthValue(sid, estimand, flavor, float(value), draws, abs(v1 - v2) / 2)


def _plasmode_truth(ref, estimand, flavor, draws, seed, working, models) -> TruthValue:
    sid = ref.scenario_id
    coefmap = models.outcome(ref.outcome)
    if flavor == "oracle" and estimand == "clogOR":
        return TruthValue(sid, estimand, "oracle", coefmap[working.treat], draws, 1e-12)
    cohort = synth_cohort(ref.cohort_n, substream(ref.cohort_seed, ("plasmode-cohort",)))
    if flavor == "oracle":
        # exact under the cohort's empirical covariate distribution
        d = cohort.with_column(Column("age10", "continuous"), cohort.column("age") / 10.0)
        d = d.drop(("age",))
        d = d.with_column(Column(working.treat, "binary"), np.zeros(d.n_rows))
        X, labels = design_matrix_labeled(d, MODEL_TERMS)
        beta = np.array([coefmap.get(lbl, 0.0) for lbl in labels])
        tj = labels.index(working.treat)
        lp0 = X @ beta
        lp1 = lp0 + beta[tj]
        mu1, mu0 = float(np.mean(expit(lp1))), float(np.mean(expit(lp0)))
        value = _marginal_value(estimand, mu1, mu0)
        half = d.n_rows // 2
        vs = []
        for rows in (slice(0, half), slice(half, None)):
            m1 = float(np.mean(expit(lp1[rows])))
            m0 = float(np.mean(expit(lp0[rows])))
            vs.append(_marginal_value(estimand, m1, m0))
        return TruthValue(sid, estimand, "oracle", value, d.n_rows, abs(vs[0] - vs[1]) / 2)
    rng = substream(seed, ("plasmode-truth", ref.outcome))
    generated = generate_plasmode(cohort, models, ref.outcome, draws, rng)
    ideal = Dataset(generated.columns, generated.values)  # unmask the PHQ columns
    value = _census_value(ideal, working, estimand)
    half = draws // 2
    v1 = _census_value(ideal.take(np.arange(half)), working, estimand)
    v2 = _census_value(ideal.take(np.arange(half, draws)), working, estimand)
    return TruthValue(sid, estimand, flavor, float(value), draws, abs(v1 - v2) / 2)


# -- truth cache ------------------------------------------------------------

_CACHE_FIELDS = ("scenario_id", "estimand", "flavor", "draws", "seed", "value", "mc_se")


class TruthCache:
    """File-backed cache keyed by (scenario, estimand, flavor, draws, seed)."""

    def __init__(self, path):
        self.path = path
        self._entries: dict[tuple, TruthValue] = {}
        if path is not None and os.path.exists(path):
            with open(path, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    key = (row["scenario_id"], row["estimand"], row["flavor"],
                           int(row["draws"]), int(row["seed"]))
                    self._entries[key] = TruthValue(
                        row["scenario_id"], row["estimand"], row["flavor"],
                        float(row["value"]), int(row["draws"]), float(row["mc_se"]))

    def get_or_compute(self, scenario, scenario_id, estimand, flavor, draws, seed,
                       **kwargs) -> TruthValue:
        key = (scenario_id, estimand, flavor, draws, seed)
        if key not in self._entries:
            self._entries[key] = compute_truth(scenario, estimand, flavor, draws,
                                               seed, **kwargs)
            self._flush()
        return self._entries[key]

    def _flush(self):
        if self.path is None:
            return
        with open(self.path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CACHE_FIELDS)
            for (sid, est, flav, draws, seed), tv in sorted(self._entries.items()):
                writer.writerow([sid, est, flav, draws, seed,
                                 repr(tv.value), repr(tv.mc_se)])


# -- summary metrics ---------------------------------------------------------


@dataclass
class SummaryRow:
    estimator: str
    estimand: str
    flavor: str
    median_bias: float
    median_pct_bias: float
    mean_bias: float
    ese: float
    mad: float
    rrmse: float
    nominal_coverage: float
    oracle_coverage: float
    convergence_rate: float
    n_records: int
    n_converged: int
    scenario_id: str = ""


def summarize(records: list[EstimateRecord], truth: TruthValue,
              scenario_id: str = "") -> SummaryRow:
    """Aggregate one estimator x estimand cell against a truth value.

    Metrics use converged records only; nominal coverage uses each record's
    own CI, oracle coverage re-centers a CI of half-width 1.96 * ESE.
    """
    if not records:
        raise ValueError("no records to summarize")
    est_ids = {r.estimator for r in records}
    nds = {r.estimand for r in records}
    if len(est_ids) != 1 or len(nds) != 1:
        raise ValueError("records must share estimator and estimand")
    if truth.estimand != next(iter(nds)):
        raise ValueError("truth estimand does not match records")
    conv = [r for r in records if r.converged]
    n, nc = len(records), len(conv)
    if nc == 0:
        return SummaryRow(records[0].estimator, records[0].estimand, truth.flavor,
                          *(np.nan,) * 8, 0.0, n, 0, scenario_id)
    pts = np.array([r.point for r in conv])
    med = float(np.median(pts))
    median_bias = med - truth.value
    mad = float(np.median(np.abs(pts - med)))
    ese = float(pts.std(ddof=1)) if nc > 1 else np.nan
    nominal = float(np.mean([(r.ci_low <= truth.value <= r.ci_high) for r in conv]))
    oracle_cov = (float(np.mean(np.abs(pts - truth.value) <= Z95 * ese))
                  if nc > 1 else np.nan)
    return SummaryRow(
        estimator=records[0].estimator,
        estimand=records[0].estimand,
        flavor=truth.flavor,
        median_bias=median_bias,
        median_pct_bias=100.0 * median_bias / truth.value if truth.value != 0 else np.nan,
        mean_bias=float(pts.mean() - truth.value),
        ese=ese,
        mad=mad,
        rrmse=float(np.sqrt(median_bias ** 2 + mad ** 2)),
        nominal_coverage=nominal,
        oracle_coverage=oracle_cov,
        convergence_rate=nc / n,
        n_records=n,
        n_converged=nc,
        scenario_id=scenario_id,
    )
