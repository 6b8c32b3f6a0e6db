import json
import os

import numpy as np
import pytest
import yaml

from misscomp.cli import main as cli_main
from misscomp.harness import (ConfigError, RunConfig, SyntheticRef, load_records,
                              run)
from misscomp.report import coverage_band, load_summaries, render_panels, text_report


def _config_dict(outdir, **overrides):
    cfg = {
        "scenarios": [{"covariates": "X1", "missing": "M1.1", "outcome": "Y1.1"}],
        "n": 400,
        "replicates": 3,
        "estimators": ["CC", "IPW"],
        "estimands": ["clogOR", "mRD"],
        "base_seed": 20260810,
        "truth_draws": 100_000,
        "outdir": str(outdir),
    }
    cfg.update(overrides)
    return cfg


def test_config_validation_rejects_unknown_scenario(tmp_path):
    raw = _config_dict(tmp_path)
    raw["scenarios"] = [{"missing": "M9.9", "outcome": "Y1.1"}]
    with pytest.raises(Exception):
        RunConfig.from_dict(raw)


def test_config_validation_rejects_tmle_with_clogor(tmp_path):
    raw = _config_dict(tmp_path, estimators=["T-MTO"])
    with pytest.raises(ValueError, match="clogOR"):
        RunConfig.from_dict(raw)


def test_manifest_hash_tracks_config_fields(tmp_path):
    a = RunConfig.from_dict(_config_dict(tmp_path))
    b = RunConfig.from_dict(_config_dict(tmp_path))
    assert a.config_hash() == b.config_hash()
    c = RunConfig.from_dict(_config_dict(tmp_path, base_seed=1))
    assert a.config_hash() != c.config_hash()
    d = RunConfig.from_dict(_config_dict(tmp_path, replicates=4))
    assert a.config_hash() != d.config_hash()


def test_run_produces_artifacts_and_is_deterministic(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    cfg1 = RunConfig.from_dict(_config_dict(out1))
    paths1 = run(cfg1)
    assert os.path.exists(paths1["records"])
    assert os.path.exists(paths1["summary"])
    manifest = json.load(open(paths1["manifest"]))
    assert manifest["config_hash"] == cfg1.config_hash()

    cfg2 = RunConfig.from_dict(_config_dict(out2))
    paths2 = run(cfg2)
    assert (open(paths1["records"], "rb").read()
            == open(paths2["records"], "rb").read())

    rows = load_records(paths1["records"])
    assert len(rows) == 3 * 2 * 2
    assert [r["replicate"] for r in rows] == sorted(r["replicate"] for r in rows)


def test_worker_pool_size_does_not_change_records(tmp_path):
    out1, out8 = tmp_path / "w1", tmp_path / "w8"
    paths1 = run(RunConfig.from_dict(_config_dict(out1, workers=1)))
    paths8 = run(RunConfig.from_dict(_config_dict(out8, workers=4)))
    assert (open(paths1["records"], "rb").read()
            == open(paths8["records"], "rb").read())


def test_partial_failure_recorded_not_fatal(tmp_path, monkeypatch):
    import misscomp.harness as harness_mod

    def boom(*args, **kwargs):
        raise RuntimeError("injected")

    monkeypatch.setitem(
        __import__("misscomp.estimators", fromlist=["x"]).__dict__, "estimate_cc", boom)
    cfg = RunConfig.from_dict(_config_dict(tmp_path / "pf"))
    paths = run(cfg)
    rows = load_records(paths["records"])
    cc_rows = [r for r in rows if r["estimator"] == "CC"]
    assert cc_rows and all(not r["converged"] for r in cc_rows)
    ipw_rows = [r for r in rows if r["estimator"] == "IPW"]
    assert any(r["converged"] for r in ipw_rows)


# -- CLI -------------------------------------------------------------------


def test_cli_simulate_and_report(tmp_path):
    cfg_path = tmp_path / "grid.yaml"
    cfg_path.write_text(yaml.safe_dump(_config_dict(tmp_path / "out")))
    assert cli_main(["simulate", "--config", str(cfg_path),
                     "--outdir", str(tmp_path / "out")]) == 0
    summary = tmp_path / "out" / "summary.csv"
    assert summary.exists()
    assert cli_main(["report", "--summary", str(summary),
                     "--records", str(tmp_path / "out" / "records.csv"),
                     "--outdir", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "report.txt").exists()
    panels = list((tmp_path / "rep").glob("*.svg"))
    assert panels


def test_cli_rejects_bad_scenario(tmp_path):
    cfg_path = tmp_path / "bad.yaml"
    bad = _config_dict(tmp_path / "out")
    bad["scenarios"] = [{"missing": "M1.1", "outcome": "Y77"}]
    cfg_path.write_text(yaml.safe_dump(bad))
    assert cli_main(["simulate", "--config", str(cfg_path)]) == 2


def test_cli_plasmode_generate(tmp_path):
    out = tmp_path / "plasmode.csv"
    rc = cli_main(["plasmode-generate", "--outcome", "5yr", "--n", "500",
                   "--cohort-n", "1000", "--seed", "3", "--out", str(out)])
    assert rc == 0
    text = out.read_text().splitlines()
    assert len(text) == 501
    assert "NA" in out.read_text()


def test_cli_truth_smoke(tmp_path, capsys):
    rc = cli_main(["truth", "--missing", "M1.1", "--outcome", "Y1.1",
                   "--estimand", "clogOR", "--flavor", "oracle",
                   "--draws", "100000", "--cache", str(tmp_path / "c.csv")])
    assert rc == 0
    assert "clogOR oracle: 0.405" in capsys.readouterr().out


# -- report ------------------------------------------------------------------


def test_coverage_band_values():
    assert coverage_band(2500) == pytest.approx(0.00854, abs=5e-5)
    assert coverage_band(1000) == pytest.approx(0.01351, abs=5e-5)


def test_empty_summary_report(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("scenario,estimator,estimand,flavor,truth,median_bias,"
                    "median_pct_bias,mean_bias,ese,mad,rrmse,nominal_coverage,"
                    "oracle_coverage,convergence_rate,n_records,n_converged\n")
    rows = load_summaries(path)
    assert rows == []
    assert text_report(rows).startswith("no summary rows")
    assert render_panels(rows, tmp_path / "panels") == []
