"""Run configuration: JSON loading, schema validation and scenario expansion."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import scenario
from .engine import EngineConfig
from .problem import CoveringSet, DistributionSchedule, ProblemSpec, validate_problem

DEFAULT_RUNS = 200
DEFAULT_V_LIST = (5.0, 50.0)
DEFAULT_BOUNDS = {
    "variant": "printed",
    "nu": 1e-3,
    "epsilon": 0.05,
    "gamma0": 0.1,
    "gamma1": 0.1,
    "lipschitz_grid": 64,
    "lipschitz_x_max": None,
    "times": [100, 1000, 5000],
    "lags": [1, 5, 10, 50],
}


class ConfigError(ValueError):
    """Raised with every problem found in a configuration."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


def load_schema() -> dict:
    text = resources.files("adpp").joinpath("schema/run_config.schema.json").read_text("utf-8")
    return json.loads(text)


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) if not isinstance(p, int) else f"[{p}]" for p in err.absolute_path]
    return ".".join(parts).replace(".[", "[") or "<root>"


def _message(err: jsonschema.ValidationError) -> str:
    where = _path(err)
    v = err.validator
    if v == "minimum":
        return f"{where} must be ≥ {err.validator_value}"
    if v == "exclusiveMinimum":
        return f"{where} must be > {err.validator_value}"
    if v == "maximum":
        return f"{where} must be ≤ {err.validator_value}"
    if v == "exclusiveMaximum":
        return f"{where} must be < {err.validator_value}"
    if v == "additionalProperties":
        return f"{where}: {err.message}"
    if v == "required":
        return f"{where}: {err.message}"
    if v == "enum":
        return f"{where} must be one of {err.validator_value}"
    return f"{where}: {err.message}"


def schema_errors(raw: dict) -> list[str]:
    validator = jsonschema.Draft202012Validator(load_schema())
    errs = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    return [_message(e) for e in errs]


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RunConfig:
    spec: ProblemSpec
    schedule: DistributionSchedule
    cover: CoveringSet
    engine: EngineConfig
    runs: int = DEFAULT_RUNS
    batch_size: int | None = None
    shard_by_run: bool = False
    output_dir: str | None = None
    v_list: tuple[float, ...] = DEFAULT_V_LIST
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    scenario: str | None = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def variant(self) -> str:
        return self.bounds["variant"]


def _problem_from_dict(d: dict) -> ProblemSpec:
    return ProblemSpec(
        state_cards=tuple(d["state_cards"]),
        action_cards=tuple(d["action_cards"]),
        costs=np.asarray(d["cost_tables"], dtype=float),
        constraints=np.asarray(d["constraints"], dtype=float),
        p_max=np.asarray(d["p_max"], dtype=float),
        p_min=np.asarray(d["p_min"], dtype=float),
        name=d.get("name", "problem"),
    )


def _read_json(path: Path, what: str) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError([f"{what} not found: {path}"]) from None
    except OSError as exc:
        raise ConfigError([f"cannot read {what} {path}: {exc}"]) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{what} {path} is not valid JSON: line {exc.lineno} col {exc.colno}: {exc.msg}"]) from None


def build_config(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    """Validate a parsed configuration dict and expand it into live objects."""
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: configuration must be a JSON object"])
    errors = schema_errors(raw)
    modes = [k for k in ("scenario", "problem", "problem_file") if k in raw]
    if len(modes) != 1:
        errors.append("exactly one of scenario, problem or problem_file must be given"
                      f" (found {modes or 'none'})")
    elif modes[0] != "scenario" and "schedule" not in raw:
        errors.append("schedule is required unless a scenario preset is used")
    elif modes[0] != "scenario" and "cover" not in raw:
        errors.append("cover is required unless a scenario preset is used")
    if errors:
        raise ConfigError(errors)

    eng = raw.get("engine", {})
    scen = None
    if "scenario" in raw:
        opts = raw.get("scenario_options", {})
        T = int(eng.get("T", 5000))
        try:
            scen = scenario.build(shift=opts.get("shift", scenario.DEFAULT_SHIFT), rho=opts.get("rho", 0.995),
                                  t_mix=opts.get("t_mix"), horizon=T, stationary=opts.get("stationary", False))
        except ValueError as exc:
            raise ConfigError([f"scenario_options: {exc}"]) from None
        defaults = {"V": scen.V, "D": scen.D, "w": scen.w, "T": scen.T}
        spec, schedule, cover = scen.spec, scen.schedule, scen.cover
    else:
        defaults = {"V": 50.0, "D": 10, "w": 40, "T": 5000}
        if "problem_file" in raw:
            pfile = Path(base_dir) / raw["problem_file"]
            pdata = _read_json(pfile, "problem_file")
            perr = [f"problem_file: {m}" for m in
                    (_message(e) for e in jsonschema.Draft202012Validator(
                        load_schema()["$defs"]["problem"]).iter_errors(pdata))]
            if perr:
                raise ConfigError(perr)
        else:
            pdata = raw["problem"]
        issues = []
        try:
            spec = _problem_from_dict(pdata)
            issues += [f"problem: {m}" for m in validate_problem(spec)]
        except (ValueError, IndexError) as exc:
            raise ConfigError([f"problem: {exc}"]) from None
        sch = raw["schedule"]
        T = int(eng.get("T", defaults["T"]))
        try:
            schedule = DistributionSchedule(np.asarray(sch["limit"], dtype=float), T,
                                            kind=sch.get("kind", "stationary"), members=sch.get("members"),
                                            rho=sch.get("rho", 0.995), t_mix=sch.get("t_mix"))
        except (ValueError, IndexError) as exc:
            issues.append(f"schedule: {exc}")
            schedule = None
        cv = raw["cover"]
        try:
            mem = np.asarray(cv["members"], dtype=float)
            delta = cv.get("delta")
            if delta is None:
                if schedule is None:
                    raise ValueError("cannot derive delta without a valid schedule")
                delta = 1.0001 * scenario.schedule_cover_radius(schedule, mem)
            if "alpha" in cv or "beta" in cv:
                base = CoveringSet.from_members(mem, delta)
                cover = CoveringSet(mem, delta, cv.get("alpha", base.alpha), cv.get("beta", base.beta))
            else:
                cover = CoveringSet.from_members(mem, delta)
            if schedule is not None:
                issues += [f"cover: {m}" for m in cover.check(schedule.limit)]
            if mem.shape[1] != spec.num_states:
                issues.append(f"cover: members have {mem.shape[1]} entries, problem has {spec.num_states} states")
        except (ValueError, IndexError) as exc:
            issues.append(f"cover: {exc}")
        if schedule is not None and schedule.limit.size != spec.num_states:
            issues.append(f"schedule: limit has {schedule.limit.size} entries, problem has {spec.num_states} states")
        if issues:
            raise ConfigError(issues)

    vals = {k: eng.get(k, defaults[k]) for k in ("V", "D", "w", "T")}
    try:
        engine = EngineConfig(V=float(vals["V"]), D=int(vals["D"]), w=int(vals["w"]), T=int(vals["T"]),
                              seed=int(eng.get("seed", 0)))
    except ValueError as exc:
        raise ConfigError([f"engine.{m}" for m in str(exc).split("; ")]) from None
    if engine.T > schedule.horizon:
        raise ConfigError([f"engine.T={engine.T} exceeds schedule horizon {schedule.horizon}"])

    bounds = dict(DEFAULT_BOUNDS)
    bounds.update(raw.get("bounds", {}))
    return RunConfig(
        spec=spec, schedule=schedule, cover=cover, engine=engine,
        runs=int(raw.get("runs", DEFAULT_RUNS)), batch_size=raw.get("batch_size"),
        shard_by_run=bool(raw.get("shard_by_run", False)), output_dir=raw.get("output_dir"),
        v_list=tuple(float(v) for v in raw.get("v_list", DEFAULT_V_LIST)), bounds=bounds,
        scenario=raw.get("scenario"), raw=raw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    raw = _read_json(path, "config file")
    return build_config(raw, path.parent)


def scenario_config(name: str = scenario.NAME, **overrides) -> RunConfig:
    """Config for a named preset; ``overrides`` are merged into the top-level dict."""
    raw = {"schema_version": 1, "scenario": name}
    raw.update(overrides)
    return build_config(raw)
