"""Run configuration, orchestration, seeding, and persistence for
scenario grids.

Every replicate derives its RNG streams from (base seed, scenario id,
replicate, purpose), so records files are byte-identical across reruns
and across worker-pool sizes; output rows are emitted in a fixed
(scenario, replicate, estimator, estimand) order regardless of
completion order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import __version__
from .estimators import (DataBundle, ESTIMATOR_IDS, ESTIMANDS, EstimateRecord,
                         PLASMODE_WORKING, SYNTHETIC_WORKING, run_estimator,
                         validate_request)
from .metrics import FLAVORS, SummaryRow, TruthCache, summarize
from .plasmode import (MODEL_TERMS, PlasmodeRef, default_models,
                       generate_plasmode, synth_cohort)
from .rng import substream
from .synthetic import ScenarioSpec, generate_scenario
from .tabular import Dataset

RECORD_FIELDS = ("scenario", "replicate", "estimator", "estimand",
                 "point", "ase", "ci_low", "ci_high", "converged")

SUMMARY_FIELDS = ("scenario", "estimator", "estimand", "flavor", "truth",
                  "median_bias", "median_pct_bias", "mean_bias", "ese", "mad",
                  "rrmse", "nominal_coverage", "oracle_coverage",
                  "convergence_rate", "n_records", "n_converged")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticRef:
    covariates: str = "X1"
    missing: str = "M1.1"
    outcome: str = "Y1.1"

    @property
    def scenario_id(self) -> str:
        return f"{self.covariates}-{self.missing}-{self.outcome}"

    def spec(self) -> ScenarioSpec:
        return ScenarioSpec.from_ids(self.covariates, self.missing, self.outcome)


@dataclass
class RunConfig:
    scenarios: tuple
    n: int
    replicates: int
    estimators: tuple[str, ...]
    estimands: tuple[str, ...]
    base_seed: int
    outdir: str
    workers: int = 1
    truth_draws: int = 2_000_000
    truth_seed: int = 1

    def validate(self) -> None:
        if self.replicates < 1:
            raise ConfigError("replicate count must be >= 1")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        for ref in self.scenarios:
            if isinstance(ref, SyntheticRef):
                ref.spec()  # raises on unknown ids
            elif not isinstance(ref, PlasmodeRef):
                raise ConfigError(f"unsupported scenario reference {ref!r}")
        for est in self.estimators:
            validate_request(est, self.estimands)

    # -- serialization ----------------------------------------------------

    def canonical_dict(self) -> dict:
        scen = []
        for ref in self.scenarios:
            if isinstance(ref, SyntheticRef):
                scen.append({"covariates": ref.covariates, "missing": ref.missing,
                             "outcome": ref.outcome})
            else:
                scen.append({"plasmode": {"outcome": ref.outcome,
                                          "cohort_n": ref.cohort_n,
                                          "cohort_seed": ref.cohort_seed}})
        return {
            "scenarios": scen, "n": self.n, "replicates": self.replicates,
            "estimators": list(self.estimators), "estimands": list(self.estimands),
            "base_seed": self.base_seed, "truth_draws": self.truth_draws,
            "truth_seed": self.truth_seed,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @staticmethod
    def from_dict(raw: dict, outdir: str | None = None) -> "RunConfig":
        try:
            refs = []
            for item in raw["scenarios"]:
                if "plasmode" in item:
                    p = item["plasmode"]
                    refs.append(PlasmodeRef(outcome=p.get("outcome", "5yr"),
                                            cohort_n=int(p.get("cohort_n", 50_337)),
                                            cohort_seed=int(p.get("cohort_seed", 1729))))
                else:
                    refs.append(SyntheticRef(item.get("covariates", "X1"),
                                             item["missing"], item["outcome"]))
            cfg = RunConfig(
                scenarios=tuple(refs),
                n=int(raw["n"]),
                replicates=int(raw["replicates"]),
                estimators=tuple(raw["estimators"]),
                estimands=tuple(raw["estimands"]),
                base_seed=int(raw["base_seed"]),
                outdir=outdir or raw.get("outdir", "."),
                workers=int(raw.get("workers", 1)),
                truth_draws=int(raw.get("truth_draws", 2_000_000)),
                truth_seed=int(raw.get("truth_seed", 1)),
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing required field {exc}") from None
        cfg.validate()
        return cfg

    @staticmethod
    def from_yaml(path, outdir: str | None = None) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        return RunConfig.from_dict(raw, outdir=outdir)


# -- replicate execution ------------------------------------------------------


def make_bundle(ref, n: int, base_seed: int, replicate: int) -> DataBundle:
    """Generate one replicate's data; pure function of (ref, n, seed, replicate)."""
    rng = substream(base_seed, (ref.scenario_id, replicate, "data"))
    if isinstance(ref, SyntheticRef):
        sim = generate_scenario(ref.spec(), n, rng)
        return DataBundle(analysis=sim.analysis, ideal=sim.ideal,
                          oracle_formula=sim.oracle_formula)
    cohort = synth_cohort(ref.cohort_n, substream(ref.cohort_seed, ("plasmode-cohort",)))
    data = generate_plasmode(cohort, default_models(), ref.outcome, n, rng)
    ideal = Dataset(data.columns, data.values)  # pre-masking values, no masks
    return DataBundle(analysis=data, ideal=ideal, oracle_formula=MODEL_TERMS)


def working_spec_for(ref):
    return SYNTHETIC_WORKING if isinstance(ref, SyntheticRef) else PLASMODE_WORKING


def run_replicate(ref, replicate: int, config: RunConfig) -> list[EstimateRecord]:
    bundle = make_bundle(ref, config.n, config.base_seed, replicate)
    working = working_spec_for(ref)
    out: list[EstimateRecord] = []
    for est in config.estimators:
        rng = substream(config.base_seed, (ref.scenario_id, replicate, "estimator", est))
        try:
            recs = run_estimator(est, bundle, working, config.estimands, rng, replicate)
        except Exception as exc:  # partial failure: record and continue
            recs = [EstimateRecord(est, e, np.nan, np.nan, np.nan, np.nan, False,
                                   replicate, {"error": repr(exc)})
                    for e in config.estimands]
        out.extend(recs)
    return out


def _worker(args):
    sid_idx, replicate, config = args
    ref = config.scenarios[sid_idx]
    return (sid_idx, replicate), run_replicate(ref, replicate, config)


# -- output files --------------------------------------------------------------


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_records(path, config: RunConfig, results: dict) -> None:
    """results maps (scenario index, replicate) -> list of records."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for s_idx, ref in enumerate(config.scenarios):
            for rep in range(config.replicates):
                for rec in results[(s_idx, rep)]:
                    writer.writerow([
                        ref.scenario_id, rec.replicate, rec.estimator, rec.estimand,
                        _fmt(rec.point), _fmt(rec.ase), _fmt(rec.ci_low),
                        _fmt(rec.ci_high), int(rec.converged),
                    ])


def load_records(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for key in ("point", "ase", "ci_low", "ci_high"):
                row[key] = float(row[key]) if row[key] else float("nan")
            row["replicate"] = int(row["replicate"])
            row["converged"] = row["converged"] == "1"
            rows.append(row)
    return rows


def records_to_objects(rows) -> list[EstimateRecord]:
    return [EstimateRecord(r["estimator"], r["estimand"], r["point"], r["ase"],
                           r["ci_low"], r["ci_high"], r["converged"], r["replicate"])
            for r in rows]


def write_summaries(path, rows: list[tuple[SummaryRow, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for summary, truth_value in rows:
            writer.writerow([
                summary.scenario_id, summary.estimator, summary.estimand,
                summary.flavor, _fmt(truth_value), _fmt(summary.median_bias),
                _fmt(summary.median_pct_bias), _fmt(summary.mean_bias),
                _fmt(summary.ese), _fmt(summary.mad), _fmt(summary.rrmse),
                _fmt(summary.nominal_coverage), _fmt(summary.oracle_coverage),
                _fmt(summary.convergence_rate), summary.n_records, summary.n_converged,
            ])


def summarize_run(config: RunConfig, results: dict, cache: TruthCache):
    """Summary rows for every scenario x estimator x estimand x flavor."""
    out = []
    for s_idx, ref in enumerate(config.scenarios):
        scenario = ref.spec() if isinstance(ref, SyntheticRef) else ref
        by_cell: dict[tuple[str, str], list[EstimateRecord]] = {}
        for rep in range(config.replicates):
            for rec in results[(s_idx, rep)]:
                by_cell.setdefault((rec.estimator, rec.estimand), []).append(rec)
        for (est, nd), records in sorted(by_cell.items(),
                                         key=lambda kv: (ESTIMATOR_IDS.index(kv[0][0]),
                                                         ESTIMANDS.index(kv[0][1]))):
            for flavor in FLAVORS:
                truth = cache.get_or_compute(scenario, ref.scenario_id, nd, flavor,
                                             config.truth_draws, config.truth_seed)
                row = summarize(records, truth, scenario_id=ref.scenario_id)
                out.append((row, truth.value))
    return out


def run(config: RunConfig) -> dict:
    """Simulate the full grid, then summarize; returns artifact paths."""
    config.validate()
    os.makedirs(config.outdir, exist_ok=True)
    tasks = [(s_idx, rep, config)
             for s_idx in range(len(config.scenarios))
             for rep in range(config.replicates)]
    results: dict = {}
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for key, recs in pool.map(_worker, tasks, chunksize=4):
                results[key] = recs
    else:
        for task in tasks:
            key, recs = _worker(task)
            results[key] = recs

    records_path = os.path.join(config.outdir, "records.csv")
    write_records(records_path, config, results)

    cache = TruthCache(os.path.join(config.outdir, "truth_cache.csv"))
    summary_rows = summarize_run(config, results, cache)
    summary_path = os.path.join(config.outdir, "summary.csv")
    write_summaries(summary_path, summary_rows)

    manifest = {
        "config": config.canonical_dict(),
        "config_hash": config.config_hash(),
        "package_version": __version__,
        "python_version": sys.version.split()[0],
        "numpy_version": np.__version__,
        "scenario_ids": [ref.scenario_id for ref in config.scenarios],
    }
    manifest_path = os.path.join(config.outdir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"records": records_path, "summary": summary_path, "manifest": manifest_path}
