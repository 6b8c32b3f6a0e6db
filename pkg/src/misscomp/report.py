"""Text report and forest-style panels from summary (and optional records)
files."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def coverage_band(reps: int, level: float = 0.95) -> float:
    """Half-width of the MC band around nominal coverage for `reps` replicates."""
    return 1.96 * math.sqrt(level * (1 - level) / reps)


def load_summaries(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for key, val in row.items():
                if key not in ("scenario", "estimator", "estimand", "flavor"):
                    row[key] = float(val) if val else float("nan")
            rows.append(row)
    return rows


def text_report(rows: list[dict]) -> str:
    if not rows:
        return "no summary rows\n"
    header = (f"{'scenario':<22}{'estimator':<9}{'estimand':<9}{'flavor':<8}"
              f"{'%bias':>9}{'rRMSE':>10}{'cover':>7}{'o-cover':>8}{'conv':>6}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['scenario']:<22}{r['estimator']:<9}{r['estimand']:<9}{r['flavor']:<8}"
            f"{r['median_pct_bias']:>9.2f}{r['rrmse']:>10.4f}"
            f"{r['nominal_coverage']:>7.3f}{r['oracle_coverage']:>8.3f}"
            f"{r['convergence_rate']:>6.2f}")
    return "\n".join(lines) + "\n"


def _bias_panel(ax, rows, records_by_key):
    labels = [r["estimator"] for r in rows]
    if records_by_key:
        data = []
        for r in rows:
            pts = records_by_key.get((r["scenario"], r["estimator"], r["estimand"]), [])
            truth = r["truth"]
            pct = [100.0 * (p - truth) / truth for p in pts if truth] if truth else []
            data.append(pct if pct else [0.0])
        ax.boxplot(data, tick_labels=labels, whis=(0, 100))
    else:
        ax.plot(range(1, len(rows) + 1), [r["median_pct_bias"] for r in rows], "o")
        ax.set_xticks(range(1, len(rows) + 1), labels)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_ylabel("% bias")


def render_panels(rows: list[dict], outdir, records: list[dict] | None = None) -> list[str]:
    """One SVG per (scenario, estimand, flavor): %bias, rRMSE, coverages."""
    os.makedirs(outdir, exist_ok=True)
    records_by_key = defaultdict(list)
    for rec in records or []:
        if rec["converged"]:
            records_by_key[(rec["scenario"], rec["estimator"], rec["estimand"])].append(
                rec["point"])
    panels = defaultdict(list)
    for r in rows:
        panels[(r["scenario"], r["estimand"], r["flavor"])].append(r)
    written = []
    for (scenario, estimand, flavor), cell_rows in sorted(panels.items()):
        fig, axes = plt.subplots(4, 1, figsize=(7, 9), sharex=True)
        labels = [r["estimator"] for r in cell_rows]
        xs = range(1, len(cell_rows) + 1)
        _bias_panel(axes[0], cell_rows, records_by_key)
        axes[0].set_title(f"{scenario}  {estimand}  ({flavor} truth)")
        axes[1].bar(xs, [r["rrmse"] for r in cell_rows])
        axes[1].set_ylabel("rRMSE")
        for ax, key, name in ((axes[2], "nominal_coverage", "nominal coverage"),
                              (axes[3], "oracle_coverage", "oracle coverage")):
            ax.plot(xs, [r[key] for r in cell_rows], "o")
            for r, x in zip(cell_rows, xs):
                band = coverage_band(int(r["n_records"])) if r["n_records"] else 0.0
                ax.fill_between([x - 0.3, x + 0.3], 0.95 - band, 0.95 + band,
                                color="tab:blue", alpha=0.2, lw=0)
            ax.axhline(0.95, color="tab:blue", lw=0.8)
            ax.set_ylabel(name)
            ax.set_ylim(0.0, 1.05)
        axes[3].set_xticks(list(xs), labels)
        fig.tight_layout()
        name = f"panel_{scenario}_{estimand}_{flavor}.svg".replace("/", "_")
        path = os.path.join(outdir, name)
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
