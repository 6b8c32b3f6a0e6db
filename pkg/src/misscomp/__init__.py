"""Missing-confounder estimator comparison toolkit."""

__version__ = "0.1.0"

from .tabular import Column, Dataset, complete_case_filter, design_matrix, load_table, write_table
from .glm import GlmFit, MarginalResult, coefficient_eif, fit_glm, fit_working_model, marginalize, predict_mean
from .calibration import CalibrationProblem, CalibratedWeights, rake, raking_variance
from .mice import MiceConfig, MiceResult, PooledEstimate, mice_impute, rubin_pool
from .learners import LearnerSpec, SuperLearnerFit, fit_learner, fit_super_learner
from .synthetic import CovariateSpec, MissingSpec, OutcomeSpec, ScenarioSpec, generate_scenario
from .plasmode import PlasmodeModels, PlasmodeRef, default_models, generate_plasmode, synth_cohort
from .estimators import (DataBundle, EstimateRecord, WorkingModelSpec,
                         SYNTHETIC_WORKING, PLASMODE_WORKING, run_estimator)
from .metrics import SummaryRow, TruthCache, TruthValue, compute_truth, summarize
from .harness import RunConfig, SyntheticRef, run
