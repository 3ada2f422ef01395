import json

import numpy as np
import pytest
from click.testing import CliRunner

from deem import __version__
from deem.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _analyze_args(cli_inputs, out, extra=()):
    return [
        "analyze",
        "--exposure", str(cli_inputs / "exposure.tsv"),
        "--outcome", str(cli_inputs / "outcome.tsv"),
        "--supplemental", str(cli_inputs / "supplemental.tsv"),
        "--blocks", str(cli_inputs / "blocks.tsv"),
        "--corr-dir", str(cli_inputs / "corr"),
        "--out", str(out),
        *extra,
    ]


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_analyze_two_sample(runner, cli_inputs, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(main, _analyze_args(cli_inputs, out))
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "result.json").read_text())
    assert np.isfinite(payload["beta"]) and payload["se"] > 0
    assert payload["mode"] == "two-sample"
    assert payload["ci"][0] < payload["beta"] < payload["ci"][1]
    assert (out / "result.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__
    assert manifest["config"]["pval_threshold"] == 0.1


def test_analyze_pleiotropy_mode_and_preset(runner, cli_inputs, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(
        main, _analyze_args(cli_inputs, out, ["--mode", "pleiotropy", "--independent"])
    )
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "result.json").read_text())
    assert payload["mode"] == "pleiotropy"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["clump_r"] == 0.01


def test_analyze_missing_supplemental_flag(runner, cli_inputs, tmp_path):
    args = _analyze_args(cli_inputs, tmp_path / "run")
    i = args.index("--supplemental")
    del args[i : i + 2]
    result = runner.invoke(main, args)
    assert result.exit_code == 2
    assert "--supplemental" in result.output


def test_analyze_empty_selection_exits_3(runner, cli_inputs, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(
        main, _analyze_args(cli_inputs, out, ["--pval-threshold", "1e-300"])
    )
    assert result.exit_code == 3
    assert "selection" in result.output
    assert not (out / "result.json").exists()


def test_analyze_requires_one_ld_source(runner, cli_inputs, tmp_path):
    args = _analyze_args(cli_inputs, tmp_path / "run")
    i = args.index("--corr-dir")
    del args[i : i + 2]
    result = runner.invoke(main, args)
    assert result.exit_code == 2
    assert "--reference" in result.output


def test_clump_noop_thresholds_keep_all(runner, cli_inputs, tmp_path):
    out = tmp_path / "clump.tsv"
    result = runner.invoke(main, [
        "clump",
        "--supplemental", str(cli_inputs / "supplemental.tsv"),
        "--blocks", str(cli_inputs / "blocks.tsv"),
        "--corr-dir", str(cli_inputs / "corr"),
        "--pval-threshold", "1.0",
        "--clump-r", "1.0",
        "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "snp_id\tkept\treason\tpvalue"
    rows = [l.split("\t") for l in lines[1:]]
    assert all(r[1] == "1" and r[2] == "kept" for r in rows)


def test_clump_empty_exits_3(runner, cli_inputs, tmp_path):
    out = tmp_path / "clump.tsv"
    result = runner.invoke(main, [
        "clump",
        "--supplemental", str(cli_inputs / "supplemental.tsv"),
        "--blocks", str(cli_inputs / "blocks.tsv"),
        "--corr-dir", str(cli_inputs / "corr"),
        "--pval-threshold", "1e-300",
        "--out", str(out),
    ])
    assert result.exit_code == 3
    assert not out.exists()


def test_simulate_writes_outputs(runner, tmp_path):
    scenario = tmp_path / "sc.json"
    scenario.write_text(json.dumps({
        "d": 40, "block_size": 10, "n_e": 20000, "n_o": 20000, "n_s": 8000,
        "n_ref": 500, "pi_c": 0.3, "h2_c": 0.3, "replicates": 1, "seed": 2,
    }))
    out = tmp_path / "study"
    result = runner.invoke(main, [
        "simulate", "--scenario", str(scenario), "--methods", "deem,plugin",
        "--threads", "1", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    import pandas as pd

    reps = pd.read_csv(out / "replicates.csv")
    assert len(reps) == 2  # methods x replicates
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__
    assert manifest["scenario"]["replicates"] == 1
    assert "deem:" in result.output and "plugin:" in result.output


def test_simulate_unknown_method_exits_2(runner, tmp_path):
    result = runner.invoke(main, [
        "simulate", "--methods", "nope", "--threads", "1",
        "--out", str(tmp_path / "study"),
    ])
    assert result.exit_code == 2
    assert "unknown method" in result.output
