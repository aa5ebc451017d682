import json

import numpy as np
import pytest

from adpp.config import build_config, scenario_config
from adpp.harness import (FINAL_QUEUES, MANIFEST, TRACES, curve_arrays, load_manifest, load_traces,
                          reproduce_paper, run_ensemble, verify_records)
from adpp.lp import solve_baseline


def small_config(**over):
    raw = {"schema_version": 1, "scenario": "paper-sec4", "engine": {"T": 100, "seed": 11}, "runs": 2}
    raw.update(over)
    return build_config(raw)


def read_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.rglob("*.csv"))}


def test_same_seed_identical_files(tmp_path):
    cfg = small_config()
    run_ensemble(cfg, tmp_path / "a")
    run_ensemble(cfg, tmp_path / "b")
    a, b = read_bytes(tmp_path / "a"), read_bytes(tmp_path / "b")
    assert set(a) == {TRACES, FINAL_QUEUES}
    assert a == b
    assert load_manifest(tmp_path / "a")["config_hash"] == load_manifest(tmp_path / "b")["config_hash"]


def test_threads_and_batches_do_not_change_output(tmp_path, monkeypatch):
    cfg = small_config(runs=5)
    run_ensemble(cfg, tmp_path / "serial", batch_size=5)
    monkeypatch.setenv("ADPP_THREADS", "3")
    run_ensemble(cfg, tmp_path / "pool", batch_size=2)
    assert read_bytes(tmp_path / "serial") == read_bytes(tmp_path / "pool")


def test_manifest_contents(tmp_path):
    cfg = small_config(runs=3)
    run_ensemble(cfg, tmp_path)
    m = load_manifest(tmp_path)
    assert m["complete"] is True and m["runs_completed"] == [0, 1, 2]
    assert m["files"][TRACES]["rows"] == 300 and m["files"][FINAL_QUEUES]["rows"] == 3
    assert m["config_hash"] == cfg.hash and m["wall_clock_s"] >= 0
    header = (tmp_path / TRACES).read_text().splitlines()[0]
    assert header == "run,t,state,j_star,m_star,p_0,p_1,p_2,p_3,Q_1,Q_2,Q_3"


def test_interrupt_marks_completed_runs_only(tmp_path):
    cfg = small_config(runs=6)

    def stop(done, total):
        if done >= 4:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_ensemble(cfg, tmp_path, batch_size=2, progress=stop)
    m = load_manifest(tmp_path)
    assert m["complete"] is False
    assert m["runs_completed"] == [0, 1, 2, 3]
    assert m["files"][TRACES]["rows"] == 400
    ens = load_traces(tmp_path)
    assert ens.runs == 4


def test_load_traces_roundtrip(tmp_path):
    cfg = small_config(runs=3)
    ens = run_ensemble(cfg, tmp_path)
    back = load_traces(tmp_path)
    for name in ("j_star", "m_star", "states"):
        np.testing.assert_array_equal(getattr(ens, name), getattr(back, name))
    np.testing.assert_allclose(back.p, ens.p, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(back.Q, ens.Q, rtol=1e-11, atol=1e-12)


def test_sharded_output(tmp_path):
    cfg = small_config(runs=3, shard_by_run=True)
    ens = run_ensemble(cfg, tmp_path)
    shards = sorted((tmp_path / "traces").glob("run_*.csv"))
    assert len(shards) == 3
    m = load_manifest(tmp_path)
    assert m["files"]["traces/run_00001.csv"]["rows"] == 100
    np.testing.assert_array_equal(load_traces(tmp_path).m_star, ens.m_star)


def test_curves_and_verify_records(tmp_path):
    cfg = small_config(runs=60, engine={"T": 200, "seed": 2}, bounds={"times": [100, 200]})
    ens = run_ensemble(cfg)
    util, power = curve_arrays(ens)
    assert util.shape == (200,) and power.shape == (200, 3)
    np.testing.assert_allclose(util[-1], -ens.p[:, :, 0].mean())
    base = solve_baseline(cfg.spec, cfg.schedule.limit, cfg.cover)
    recs = verify_records(cfg, ens, base)
    assert len(recs["tail"]) == 2 * 4 * 5
    assert len(recs["detection"]) == 200 - 49
    assert {r["slack"] for r in recs["sample_path"]} == {"pmax_minus_c", "c"}
    assert all(r["violations"] == 0 for r in recs["sample_path"])


def test_reproduce_paper_small(tmp_path):
    cfg = build_config({"scenario": "paper-sec4", "engine": {"T": 120, "seed": 0}, "runs": 3,
                        "v_list": [5, 50], "bounds": {"times": [60, 120]}})
    summary = reproduce_paper(tmp_path, config=cfg)
    assert summary["lp_optimum_utility"] == pytest.approx(0.126667, abs=1e-6)
    assert set(summary["V"]) == {"5", "50"}
    for name in ("utility_vs_time.csv", "power_vs_time.csv", "lp_optimum.csv", "bounds.csv", "mixing.csv",
                 "summary.json", MANIFEST):
        assert (tmp_path / name).exists()
    util = np.loadtxt(tmp_path / "utility_vs_time.csv", delimiter=",", skiprows=1)
    assert util.shape == (240, 4)
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    assert manifest["files"]["utility_vs_time.csv"]["rows"] == 240
    header = (tmp_path / "bounds.csv").read_text().splitlines()[0]
    assert header == "V,variant,quantity,k,t,s,value,raw"


def test_scenario_config_defaults():
    cfg = scenario_config()
    assert cfg.engine.V == 50 and cfg.runs == 200
