import json

import pytest

from adpp.cli import main


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("solve-baseline", "simulate", "analyze", "verify-bounds", "reproduce-paper"):
        assert cmd in out


@pytest.mark.parametrize("cmd", ["simulate", "analyze", "reproduce-paper", "verify-bounds"])
def test_subcommand_help_documents_flags(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    out = capsys.readouterr().out
    assert "--out" in out


def test_unknown_subcommand_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_bad_flag_values_exit_1():
    assert main(["analyze", "--traces", "x", "--lags", "a,b"]) == 1
    assert main(["simulate", "--bound-variant", "loose"]) == 1


def test_solve_baseline_prints_optimum(tmp_path, capsys):
    assert main(["solve-baseline", "--scenario", "paper-sec4", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "LP optimum (utility): 0.126667" in out
    data = json.loads((tmp_path / "baseline.json").read_text())
    assert data["strategies"] == 4096 and data["gap_holds"]


def test_config_validation_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "paper-sec4", "engine": {"V": -1}}))
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "engine.V must be ≥ 0" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1


def test_simulate_analyze_verify(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "scenario": "paper-sec4", "engine": {"T": 150, "seed": 3},
                               "bounds": {"times": [150]}}))
    traces = tmp_path / "tr"
    assert main(["simulate", "--config", str(cfg), "--runs", "50", "--out", str(traces)]) == 0
    assert (traces / "traces.csv").exists() and (traces / "manifest.json").exists()
    assert main(["analyze", "--traces", str(traces), "--lags", "1,5,10,50"]) == 0
    lines = (traces / "mixing.csv").read_text().splitlines()
    assert lines[0].startswith("k,s,beta_hat")
    assert len(lines) == 1 + 4 * 4
    assert (traces / "bounds.csv").exists()
    assert main(["verify-bounds", "--traces", str(traces), "--out", str(tmp_path / "v")]) == 0
    out = capsys.readouterr().out
    assert "sample-path queue bound" in out
    assert (tmp_path / "v" / "verify_tail.csv").exists()


def test_simulate_v_list_subdirs(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "paper-sec4", "engine": {"T": 80}}))
    assert main(["simulate", "--config", str(cfg), "--runs", "2", "--v-list", "5,50", "--seed", "4",
                 "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "V5" / "traces.csv").exists()
    m = json.loads((tmp_path / "o" / "V50" / "manifest.json").read_text())
    assert m["engine"]["V"] == 50 and m["engine"]["seed"] == 4


def test_analyze_missing_traces_exit_1(tmp_path):
    assert main(["analyze", "--traces", str(tmp_path)]) == 1
