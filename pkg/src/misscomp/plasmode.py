"""Plasmode replication engine for the logistic data-generating models.

Bootstraps covariate rows from a cohort table, then simulates treatment
receipt, outcome, and missingness of the PHQ columns from fixed
coefficient tables. A synthetic stand-in cohort with matching marginal
distributions replaces the restricted source data; all downstream checks
are relative to the generating models, not the cohort.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .tabular import Column, Dataset, design_matrix_labeled

CHARLSON_LEVELS = ("0", "1", "2", "3+")
PHQ8_LEVELS = ("0-5", "5-10", "11-15", "16-20", "21-24")
PHQ9_LEVELS = ("0", "1", "2", "3")

COHORT_COLUMNS = (
    Column("female", "binary"),
    Column("age", "continuous"),
    Column("charlson", "categorical", CHARLSON_LEVELS),
    Column("anxiety", "binary"),
    Column("alcohol", "binary"),
    Column("selfharm", "binary"),
    Column("mh_hosp", "binary"),
    Column("phq8", "categorical", PHQ8_LEVELS),
    Column("phq9", "categorical", PHQ9_LEVELS),
)

# Published overall marginals for the stand-in cohort draws.
_P_FEMALE = 0.648
_AGE_BANDS = ((13.0, 18.0, 0.090), (18.0, 30.0, 0.230), (30.0, 45.0, 0.251),
              (45.0, 65.0, 0.295), (65.0, 90.0, 0.133))
_P_CHARLSON = (0.771, 0.136, 0.045, 0.047)
_P_ANXIETY = 0.157
_P_ALCOHOL = 0.022
_P_SELFHARM = 0.005
_P_MH_HOSP = 0.059
_P_PHQ8 = (0.097, 0.217, 0.311, 0.268, 0.107)
_P_PHQ9 = (0.668, 0.203, 0.079, 0.051)

# Model design over the bootstrapped covariates; age enters in decades.
MODEL_TERMS = (
    "X", "female", "age10", "age10*age10", "charlson", "anxiety", "alcohol",
    "selfharm", "mh_hosp", "phq8", "phq9", "charlson*anxiety", "age10*female",
    "female*selfharm", "age10*selfharm", "charlson*age10", "phq9*female",
    "phq9*selfharm",
)

PHQ_COLUMNS = ("phq8", "phq9")


def _coeffs(intercept, x, female, age10, age10sq, charlson, anxiety, alcohol,
            selfharm, mh_hosp, phq8, phq9, charlson_anxiety, age10_female,
            female_selfharm, age10_selfharm, charlson_age10, phq9_female,
            phq9_selfharm):
    out = {"(intercept)": intercept, "X": x, "female": female, "age10": age10,
           "age10*age10": age10sq, "anxiety": anxiety, "alcohol": alcohol,
           "selfharm": selfharm, "mh_hosp": mh_hosp,
           "age10*female": age10_female, "female*selfharm": female_selfharm,
           "age10*selfharm": age10_selfharm}
    for lvl, v in zip(CHARLSON_LEVELS[1:], charlson):
        out[f"charlson[{lvl}]"] = v
    for lvl, v in zip(PHQ8_LEVELS[1:], phq8):
        out[f"phq8[{lvl}]"] = v
    for lvl, v in zip(PHQ9_LEVELS[1:], phq9):
        out[f"phq9[{lvl}]"] = v
    for lvl, v in zip(CHARLSON_LEVELS[1:], charlson_anxiety):
        out[f"charlson[{lvl}]*anxiety"] = v
    for lvl, v in zip(CHARLSON_LEVELS[1:], charlson_age10):
        out[f"charlson[{lvl}]*age10"] = v
    for lvl, v in zip(PHQ9_LEVELS[1:], phq9_female):
        out[f"phq9[{lvl}]*female"] = v
    for lvl, v in zip(PHQ9_LEVELS[1:], phq9_selfharm):
        out[f"phq9[{lvl}]*selfharm"] = v
    return out


@dataclass(frozen=True)
class PlasmodeRef:
    """Identifies one plasmode scenario: a fixed stand-in cohort plus the
    generating models and target outcome."""

    outcome: str = "5yr"
    cohort_n: int = 50_337
    cohort_seed: int = 1729

    def __post_init__(self):
        if self.outcome not in ("1yr", "5yr"):
            raise ValueError(f"plasmode outcome must be '1yr' or '5yr', got {self.outcome!r}")

    @property
    def scenario_id(self) -> str:
        return f"plasmode-glm-{self.outcome}"


@dataclass
class PlasmodeModels:
    """Coefficient maps (design label -> value) for the four generating models."""

    missing_phq: dict[str, float]
    treatment: dict[str, float]
    outcome_5yr: dict[str, float]
    outcome_1yr: dict[str, float]

    def outcome(self, which: str) -> dict[str, float]:
        if which == "5yr":
            return self.outcome_5yr
        if which == "1yr":
            return self.outcome_1yr
        raise ValueError(f"outcome must be '1yr' or '5yr', got {which!r}")


def default_models() -> PlasmodeModels:
    return PlasmodeModels(
        missing_phq=_coeffs(
            0.15, 0.0, 0.02, -0.90, 0.002, (0.16, 0.11, 0.28), 0.11, 0.08,
            0.0, 0.0, (0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0),
            (-0.13, -0.08, -0.02), -0.16, -0.38, 0.30,
            (-0.004, -0.002, -0.005), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        treatment=_coeffs(
            2.60, 0.0, -0.24, -0.33, 0.01, (0.64, 0.43, 0.12), 0.51, 0.24,
            0.14, -0.32, (-0.88, -1.67, -2.07, -2.13), (0.14, 0.12, 0.45),
            (0.11, -0.09, -0.25), 0.003, 0.15, -0.03,
            (-0.09, -0.07, -0.01), (0.09, 0.05, 0.03), (0.50, 0.89, 0.33)),
        outcome_5yr=_coeffs(
            -1.28, -0.21, 0.36, -0.65, 0.08, (1.51, 0.43, -0.08), 0.84, 0.15,
            1.96, 0.91, (-0.03, 0.21, 0.34, 0.35), (0.22, 0.30, 0.55),
            (0.25, 0.15, -0.16), -0.07, -0.01, -0.20,
            (-0.15, -0.07, 0.02), (-0.04, -0.06, 0.06), (-0.22, -0.49, -0.53)),
        outcome_1yr=_coeffs(
            -2.27, 0.10, 0.47, -0.18, 0.00, (0.34, 0.37, 0.55), 0.41, 0.77,
            1.38, 0.93, (-0.39, -0.07, -0.01, -0.14), (1.14, 1.44, 2.00),
            (0.52, 0.08, 0.05), -0.01, 0.41, 0.04,
            (-0.01, -0.01, -0.02), (-0.16, -0.34, 0.03), (-0.39, -0.91, -1.56)),
    )


def save_models(models: PlasmodeModels, path) -> None:
    """Plain-text key=value dump, one `model.term = value` line each."""
    with open(path, "w", encoding="utf-8") as fh:
        for model_name in ("missing_phq", "treatment", "outcome_5yr", "outcome_1yr"):
            for term, value in getattr(models, model_name).items():
                fh.write(f"{model_name}.{term} = {value!r}\n")


def load_models(path) -> PlasmodeModels:
    maps = {"missing_phq": {}, "treatment": {}, "outcome_5yr": {}, "outcome_1yr": {}}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            model_name, _, term = key.strip().partition(".")
            if model_name not in maps:
                raise ValueError(f"unknown model {model_name!r} in {path}")
            maps[model_name][term.strip()] = float(value)
    return PlasmodeModels(**maps)


def synth_cohort(n: int, rng: np.random.Generator) -> Dataset:
    """Stand-in cohort: independent categorical draws matching published
    marginals, age uniform within published bands."""
    if n < 1:
        raise ValueError("n must be >= 1")
    female = (rng.random(n) < _P_FEMALE).astype(float)
    probs = np.array([b[2] for b in _AGE_BANDS])
    band = rng.choice(len(_AGE_BANDS), size=n, p=probs / probs.sum())
    lo = np.array([b[0] for b in _AGE_BANDS])[band]
    hi = np.array([b[1] for b in _AGE_BANDS])[band]
    age = lo + rng.random(n) * (hi - lo)

    def cat(p):
        p = np.asarray(p, dtype=float)
        return rng.choice(len(p), size=n, p=p / p.sum()).astype(float)

    vals = np.column_stack([
        female, age, cat(_P_CHARLSON),
        (rng.random(n) < _P_ANXIETY).astype(float),
        (rng.random(n) < _P_ALCOHOL).astype(float),
        (rng.random(n) < _P_SELFHARM).astype(float),
        (rng.random(n) < _P_MH_HOSP).astype(float),
        cat(_P_PHQ8), cat(_P_PHQ9),
    ])
    return Dataset(COHORT_COLUMNS, vals)


def _linear_predictor(d: Dataset, coefmap: dict[str, float], terms) -> np.ndarray:
    X, labels = design_matrix_labeled(d, terms)
    beta = np.array([coefmap.get(label, 0.0) for label in labels])
    if np.isneginf(beta[0]) and np.all(np.isfinite(beta[1:])):
        return np.full(d.n_rows, -np.inf)
    return X @ beta


def generate_plasmode(cohort: Dataset, models: PlasmodeModels, outcome: str,
                      n: int, rng: np.random.Generator) -> Dataset:
    """Bootstrap covariates, then simulate treatment, outcome, and PHQ
    missingness; the emitted table masks only the PHQ columns."""
    if cohort.n_rows < 1:
        raise ValueError("cohort is empty")
    idx = rng.integers(0, cohort.n_rows, size=n)
    boot = cohort.take(idx)
    d = boot.with_column(Column("age10", "continuous"), boot.column("age") / 10.0)
    d = d.drop(("age",))

    no_x = tuple(t for t in MODEL_TERMS if t != "X")
    p_treat = expit(_linear_predictor(d, models.treatment, no_x))
    d = d.with_column(Column("X", "binary"), (rng.random(n) < p_treat).astype(float))

    p_out = expit(_linear_predictor(d, models.outcome(outcome), MODEL_TERMS))
    d = d.with_column(Column("Y", "binary"), (rng.random(n) < p_out).astype(float))

    p_miss = expit(_linear_predictor(d, models.missing_phq, MODEL_TERMS))
    r = (rng.random(n) >= p_miss).astype(float)
    d = d.with_column(Column("R", "binary"), r)
    masked = r == 0
    for name in PHQ_COLUMNS:
        d = d.with_values(name, d.column(name), mask=masked)
    return d
