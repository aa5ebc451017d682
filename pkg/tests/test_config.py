import json

import numpy as np
import pytest

from adpp.config import ConfigError, build_config, config_hash, load_config, load_schema, scenario_config


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return path


def tiny_problem():
    return {"state_cards": [2], "action_cards": [2],
            "cost_tables": [[[0.0, 0.0], [-1.0, -0.5]], [[0.0, 0.0], [1.0, 1.0]]],
            "constraints": [0.5], "p_max": [0.0, 1.0], "p_min": [-1.0, 0.0]}


def tiny_config(**over):
    cfg = {"schema_version": 1, "problem": tiny_problem(),
           "schedule": {"limit": [0.5, 0.5]},
           "cover": {"members": [[0.5, 0.5], [0.8, 0.2]]},
           "engine": {"V": 10, "D": 1, "w": 2, "T": 50, "seed": 1}, "runs": 2}
    cfg.update(over)
    return cfg


def test_schema_is_shipped():
    schema = load_schema()
    assert schema["properties"]["engine"]["properties"]["V"]["minimum"] == 0


def test_minimal_valid_config(tmp_path):
    cfg = load_config(write(tmp_path, "c.json", tiny_config()))
    assert cfg.runs == 2 and cfg.engine.T == 50 and cfg.spec.num_penalties == 1
    assert len(cfg.cover) == 2 and cfg.cover.delta > 0
    assert cfg.variant == "printed"


def test_negative_V_message(tmp_path):
    raw = tiny_config()
    raw["engine"]["V"] = -1
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, "c.json", raw))
    assert "engine.V must be ≥ 0" in err.value.messages


def test_every_violation_listed(tmp_path):
    raw = tiny_config(runs=0, bogus=True)
    raw["engine"]["w"] = 0
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, "c.json", raw))
    msgs = err.value.messages
    assert "runs must be ≥ 1" in msgs and "engine.w must be ≥ 1" in msgs
    assert any("bogus" in m for m in msgs)


def test_scenario_preset_expansion():
    cfg = build_config({"scenario": "paper-sec4"})
    assert cfg.spec.num_states == 64 and len(cfg.cover) == 8
    assert (cfg.engine.D, cfg.engine.w, cfg.engine.T) == (10, 40, 5000)
    assert cfg.v_list == (5.0, 50.0) and cfg.runs == 200
    short = build_config({"scenario": "paper-sec4", "engine": {"T": 300},
                          "scenario_options": {"stationary": True}})
    assert short.schedule.horizon == 300 and short.schedule.kind == "stationary"


def test_problem_file_relative_to_config(tmp_path):
    (tmp_path / "sub").mkdir()
    write(tmp_path / "sub", "prob.json", tiny_problem())
    raw = tiny_config()
    del raw["problem"]
    raw["problem_file"] = "prob.json"
    cfg = load_config(write(tmp_path / "sub", "c.json", raw))
    np.testing.assert_array_equal(cfg.spec.constraints, [0.5])


def test_missing_files_and_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(write(tmp_path, "bad.json", "{not json"))
    raw = tiny_config()
    del raw["problem"]
    raw["problem_file"] = "missing.json"
    with pytest.raises(ConfigError, match="problem_file not found"):
        load_config(write(tmp_path, "c.json", raw))


def test_mode_exclusivity():
    with pytest.raises(ConfigError, match="exactly one"):
        build_config(tiny_config(scenario="paper-sec4"))
    raw = tiny_config()
    del raw["schedule"]
    with pytest.raises(ConfigError, match="schedule is required"):
        build_config(raw)


def test_semantic_problem_errors():
    raw = tiny_config()
    raw["problem"]["constraints"] = []
    with pytest.raises(ConfigError, match="constraint count mismatch"):
        build_config(raw)
    raw = tiny_config()
    raw["engine"]["T"] = 3
    with pytest.raises(ConfigError, match="T must exceed"):
        build_config(raw)
    raw = tiny_config()
    raw["cover"]["members"] = [[0.2, 0.3, 0.5]]
    with pytest.raises(ConfigError, match="cover"):
        build_config(raw)


def test_hash_is_canonical():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"x": 2, "y": [1, 2]})
    assert scenario_config().hash == scenario_config().hash
