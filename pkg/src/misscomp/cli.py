"""Command-line interface: truth, simulate, summarize, plasmode-generate,
report."""

from __future__ import annotations

import argparse
import os
import sys

from .estimators import ESTIMANDS
from .harness import (ConfigError, RunConfig, SyntheticRef, load_records,
                      records_to_objects, run, summarize_run, write_summaries)
from .metrics import FLAVORS, TruthCache, compute_truth, summarize
from .plasmode import PlasmodeRef, default_models, generate_plasmode, load_models, synth_cohort
from .rng import substream
from .synthetic import ScenarioError, ScenarioSpec
from .tabular import write_table
from . import report as report_mod


def _scenario_from_args(args):
    if args.plasmode_outcome:
        return PlasmodeRef(outcome=args.plasmode_outcome, cohort_n=args.cohort_n,
                           cohort_seed=args.cohort_seed)
    return ScenarioSpec.from_ids(args.covariates, args.missing, args.outcome)


def cmd_truth(args) -> int:
    scenario = _scenario_from_args(args)
    sid = scenario.scenario_id
    estimands = args.estimand or list(ESTIMANDS)
    flavors = [args.flavor] if args.flavor else list(FLAVORS)
    cache = TruthCache(args.cache)
    for estimand in estimands:
        for flavor in flavors:
            tv = cache.get_or_compute(scenario, sid, estimand, flavor,
                                      args.draws, args.seed)
            print(f"{sid} {estimand} {flavor}: {tv.value:.6g} (mc_se {tv.mc_se:.2g})")
    return 0


def cmd_simulate(args) -> int:
    config = RunConfig.from_yaml(args.config, outdir=args.outdir)
    if args.seed_override is not None:
        config.base_seed = args.seed_override
    if args.workers is not None:
        config.workers = args.workers
    config.validate()
    paths = run(config)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_summarize(args) -> int:
    config = RunConfig.from_yaml(args.config, outdir=args.outdir or ".")
    rows = load_records(args.records)
    by_scenario: dict[str, dict] = {}
    for row in rows:
        cell = by_scenario.setdefault(row["scenario"], {})
        cell.setdefault((row["estimator"], row["estimand"]), []).append(row)
    cache = TruthCache(args.truth_cache)
    out = []
    refs = {ref.scenario_id: ref for ref in config.scenarios}
    for sid, cells in by_scenario.items():
        if sid not in refs:
            print(f"error: scenario {sid} not in config", file=sys.stderr)
            return 2
        ref = refs[sid]
        scenario = ref.spec() if isinstance(ref, SyntheticRef) else ref
        for (est, nd), cell_rows in cells.items():
            records = records_to_objects(cell_rows)
            for flavor in FLAVORS:
                truth = cache.get_or_compute(scenario, sid, nd, flavor,
                                             config.truth_draws, config.truth_seed)
                out.append((summarize(records, truth, scenario_id=sid), truth.value))
    write_summaries(args.out, out)
    print(f"summary: {args.out}")
    return 0


def cmd_plasmode_generate(args) -> int:
    models = load_models(args.models) if args.models else default_models()
    cohort = synth_cohort(args.cohort_n, substream(args.cohort_seed, ("plasmode-cohort",)))
    rng = substream(args.seed, ("plasmode-generate", args.outcome))
    data = generate_plasmode(cohort, models, args.outcome, args.n, rng)
    write_table(data, args.out)
    print(f"wrote {data.n_rows} rows to {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = report_mod.load_summaries(args.summary)
    text = report_mod.text_report(rows)
    os.makedirs(args.outdir, exist_ok=True)
    report_path = os.path.join(args.outdir, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    records = load_records(args.records) if args.records else None
    if rows:
        panels = report_mod.render_panels(rows, args.outdir, records)
        for p in panels:
            print(f"panel: {p}")
    return 0


def _add_scenario_args(p):
    p.add_argument("--covariates", default="X1")
    p.add_argument("--missing", default="M1.1")
    p.add_argument("--outcome", default="Y1.1")
    p.add_argument("--plasmode-outcome", choices=("1yr", "5yr"))
    p.add_argument("--cohort-n", type=int, default=50_337)
    p.add_argument("--cohort-seed", type=int, default=1729)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="misscomp",
                                     description="missing-confounder estimator comparison toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("truth", help="compute oracle/census truth values")
    _add_scenario_args(p)
    p.add_argument("--estimand", action="append", choices=ESTIMANDS)
    p.add_argument("--flavor", choices=FLAVORS)
    p.add_argument("--draws", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--cache")
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("simulate", help="run a scenario grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", default=".")
    p.add_argument("--seed-override", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="aggregate a records file into summary metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--outdir")
    p.add_argument("--truth-cache")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("plasmode-generate", help="emit one plasmode dataset as CSV")
    p.add_argument("--outcome", choices=("1yr", "5yr"), default="5yr")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--cohort-n", type=int, default=50_337)
    p.add_argument("--cohort-seed", type=int, default=1729)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--models")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plasmode_generate)

    p = sub.add_parser("report", help="text report and SVG panels from summaries")
    p.add_argument("--summary", required=True)
    p.add_argument("--records")
    p.add_argument("--outdir", default="report")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
