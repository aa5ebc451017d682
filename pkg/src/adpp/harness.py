"""Monte Carlo orchestration and CSV / manifest output."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (MIN_RUNS, MixingTooSlow, TraceEnsemble, clip01, detection_error_bound, divergence_series,
                       estimate_beta_one, sample_path_violations, tail_comparison, theorem3_quantities, zeta)
from .config import RunConfig, build_config, scenario_config
from .engine import BatchResult, EngineConfig, Prepared, run_batch
from .lp import solve_baseline
from .problem import metric_entropy

log = logging.getLogger(__name__)

FLOAT_FMT = "%.12g"
MANIFEST = "manifest.json"
TRACES = "traces.csv"
FINAL_QUEUES = "final_queues.csv"
DEFAULT_BATCH = 25


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ADPP_THREADS", "1")))
    except ValueError:
        log.warning("ignoring non-integer ADPP_THREADS=%r", os.environ.get("ADPP_THREADS"))
        return 1


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def write_csv(path: Path, header: list[str], rows, mode: str = "w", write_header: bool = True) -> int:
    """Write numeric rows with a fixed 12-significant-digit format. Returns the row count."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float)) if len(rows) else np.empty((0, len(header)))
    with open(path, mode, newline="", encoding="utf-8") as fh:
        if write_header:
            fh.write(",".join(header) + "\n")
        if rows.size:
            np.savetxt(fh, rows, fmt=FLOAT_FMT, delimiter=",")
    return rows.shape[0]


def write_records(path: Path, records: list[dict], header: list[str] | None = None) -> int:
    """Write dict rows; numbers use the fixed float format, everything else str()."""
    if header is None:
        header = list(records[0]) if records else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for rec in records:
            wr.writerow([_fmt(rec.get(h, "")) for h in header])
    return len(records)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def trace_header(K: int) -> list[str]:
    return (["run", "t", "state", "j_star", "m_star"] + [f"p_{k}" for k in range(K + 1)]
            + [f"Q_{k}" for k in range(1, K + 1)])


def trace_rows(batch: BatchResult, run_indices) -> np.ndarray:
    R, T = batch.states.shape
    K = batch.Q.shape[2]
    out = np.empty((R * T, 5 + (K + 1) + K))
    out[:, 0] = np.repeat(np.asarray(run_indices), T)
    out[:, 1] = np.tile(np.arange(T), R)
    out[:, 2] = batch.states.ravel()
    out[:, 3] = batch.j_star.ravel()
    out[:, 4] = batch.m_star.ravel()
    out[:, 5:6 + K] = batch.p.reshape(R * T, K + 1)
    out[:, 6 + K:] = batch.Q[:, :T].reshape(R * T, K)
    return out


def _count_rows(path: Path) -> int:
    with open(path, "rb") as fh:
        return max(sum(1 for _ in fh) - 1, 0)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

def _write_manifest(out: Path, config: RunConfig, engine: EngineConfig, files: list[str], completed: list[int],
                    requested: int, started: float, extra: dict | None = None) -> dict:
    manifest = {
        "package_version": __version__,
        "config_hash": config.hash,
        "config": config.raw,
        "engine": {"V": engine.V, "D": engine.D, "w": engine.w, "T": engine.T, "seed": engine.seed},
        "num_penalties": config.spec.num_penalties,
        "runs_requested": requested,
        "runs_completed": sorted(completed),
        "complete": len(completed) == requested,
        "float_format": FLOAT_FMT,
        "files": {name: {"rows": _count_rows(out / name)} for name in sorted(files)},
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        manifest.update(extra)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def run_ensemble(config: RunConfig, out_dir=None, *, runs: int | None = None, V: float | None = None,
                 batch_size: int | None = None, progress=None, prepared: Prepared | None = None) -> TraceEnsemble:
    """Run ``runs`` seeded episodes, persist traces when ``out_dir`` is given, return the ensemble.

    Runs are executed in batches (optionally on ADPP_THREADS worker threads);
    a single writer appends each finished batch in run order. If anything
    interrupts the loop the manifest is still written, listing only the runs
    whose traces were flushed, with ``complete: false``.
    """
    R = config.runs if runs is None else runs
    if R < 1:
        raise ValueError("need at least one run")
    eng = config.engine
    if V is not None:
        eng = EngineConfig(V=float(V), D=eng.D, w=eng.w, T=eng.T, seed=eng.seed)
    prep = prepared or Prepared.build(config.spec, config.schedule, config.cover)
    K = config.spec.num_penalties
    bs = batch_size or config.batch_size or DEFAULT_BATCH
    batches = [list(range(s, min(s + bs, R))) for s in range(0, R, bs)]
    out = Path(out_dir) if out_dir is not None else None
    files: list[str] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if config.shard_by_run:
            (out / "traces").mkdir(exist_ok=True)
        else:
            write_csv(out / TRACES, trace_header(K), [])
            files.append(TRACES)
    started = time.perf_counter()
    done: list[int] = []
    results: list[BatchResult] = []
    workers = min(worker_count(), len(batches))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        it = (pool.map(lambda idx: run_batch(prep, eng, idx), batches) if pool
              else (run_batch(prep, eng, idx) for idx in batches))
        for idx, res in zip(batches, it):
            if out is not None:
                rows = trace_rows(res, idx)
                if config.shard_by_run:
                    T = eng.T
                    for r, run in enumerate(idx):
                        name = f"traces/run_{run:05d}.csv"
                        write_csv(out / name, trace_header(K), rows[r * T:(r + 1) * T])
                        files.append(name)
                else:
                    write_csv(out / TRACES, trace_header(K), rows, mode="a", write_header=False)
            results.append(res)
            done.extend(idx)
            if progress is not None:
                progress(len(done), R)
            log.info("runs %d/%d done (V=%g) %.1fs", len(done), R, eng.V, time.perf_counter() - started)
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)
        if out is not None:
            final = np.concatenate([r.Q[:, -1, :] for r in results]) if results else np.empty((0, K))
            write_csv(out / FINAL_QUEUES, ["run"] + [f"Q_{k}" for k in range(1, K + 1)],
                      np.column_stack([np.asarray(done, dtype=float), final]) if done else [])
            files.append(FINAL_QUEUES)
            _write_manifest(out, config, eng, files, done, R, started)
    wall = time.perf_counter() - started
    log.info("ensemble of %d runs finished in %.1fs", R, wall)
    return TraceEnsemble.from_batches(results, {"V": eng.V, "D": eng.D, "w": eng.w, "T": eng.T,
                                                "seed": eng.seed, "wall_clock_s": wall,
                                                "config_hash": config.hash})


def load_manifest(trace_dir) -> dict:
    path = Path(trace_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {trace_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_traces(trace_dir) -> TraceEnsemble:
    """Rebuild a TraceEnsemble from a directory written by ``run_ensemble`` (completed runs only)."""
    trace_dir = Path(trace_dir)
    manifest = load_manifest(trace_dir)
    K = int(manifest["num_penalties"])
    T = int(manifest["engine"]["T"])
    runs = manifest["runs_completed"]
    if not runs:
        raise ValueError(f"{trace_dir} holds no completed runs")
    if (trace_dir / TRACES).exists():
        data = np.loadtxt(trace_dir / TRACES, delimiter=",", skiprows=1, ndmin=2)
    else:
        data = np.concatenate([np.loadtxt(trace_dir / f"traces/run_{r:05d}.csv", delimiter=",", skiprows=1,
                                          ndmin=2) for r in runs])
    data = data[np.isin(data[:, 0], runs)]
    data = data[np.lexsort((data[:, 1], data[:, 0]))]
    R = len(runs)
    if data.shape[0] != R * T:
        raise ValueError(f"expected {R * T} trace rows, found {data.shape[0]}")
    cube = data.reshape(R, T, -1)
    fq = np.loadtxt(trace_dir / FINAL_QUEUES, delimiter=",", skiprows=1, ndmin=2)
    fq = fq[np.argsort(fq[:, 0])]
    fq = fq[np.isin(fq[:, 0], runs)][:, 1:]
    Q = np.concatenate([cube[:, :, 6 + K:], fq[:, None, :]], axis=1)
    return TraceEnsemble(cube[:, :, 3].astype(np.int64), cube[:, :, 4].astype(np.int64),
                         cube[:, :, 5:6 + K], Q, cube[:, :, 2].astype(np.int64),
                         {**manifest["engine"], "config_hash": manifest["config_hash"]})


def config_from_manifest(trace_dir) -> RunConfig:
    return build_config(load_manifest(trace_dir)["config"], Path(trace_dir))


# ---------------------------------------------------------------------------
# analysis products
# ---------------------------------------------------------------------------

def mixing_records(ensemble: TraceEnsemble, lags, D: int, w: int, V=None) -> list[dict]:
    out = []
    if ensemble.runs < MIN_RUNS:
        log.warning("mixing estimates need at least %d runs (have %d); skipped", MIN_RUNS, ensemble.runs)
        return out
    for k in range(ensemble.num_penalties + 1):
        est = estimate_beta_one(ensemble, k, lags, D=D, w=w, warn=False)
        for s, b in zip(est.lags, est.beta_hat):
            rec = {"k": k, "s": s, "beta_hat": float(b), "anchors": len(est.anchors[est.lags.index(s)]),
                   "min_expected_count": est.min_expected_count}
            out.append(rec if V is None else {"V": V, **rec})
    return out


def bound_records(config: RunConfig, ensemble: TraceEnsemble, baseline, times, V: float,
                  variant: str | None = None) -> list[dict]:
    b = config.bounds
    variant = variant or b["variant"]
    if ensemble.runs < MIN_RUNS:
        log.warning("tail bounds need at least %d runs (have %d); reporting ensemble-free quantities only",
                    MIN_RUNS, ensemble.runs)
    rows = []
    for t in times:
        if t > ensemble.horizon:
            continue
        kw = dict(i_star=baseline.i_star, p_opt=baseline.p_opt, lipschitz=baseline.lipschitz,
                  distance=baseline.distance, nu=b["nu"], V=V, D=config.engine.D, w=config.engine.w, t=int(t),
                  variant=variant, ensemble=ensemble if ensemble.runs >= MIN_RUNS else None, eps=b["epsilon"])
        try:
            rep = theorem3_quantities(config.spec, config.schedule, config.cover,
                                      gammas=(b["gamma0"], b["gamma1"]), **kw)
        except MixingTooSlow as exc:
            log.info("t=%d: %s; thresholds omitted", t, exc)
            rep = theorem3_quantities(config.spec, config.schedule, config.cover, **kw)
            rep.notes.append(str(exc))
        rows.extend({"V": V, "variant": variant, **r} for r in rep.rows())
    return rows


BOUND_HEADER = ["V", "variant", "quantity", "k", "t", "s", "value", "raw"]


def curve_arrays(ensemble: TraceEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-mean running-average utility (T,) and per-node power (T, K)."""
    util = -ensemble.running_average(0).mean(axis=0)
    power = np.stack([ensemble.running_average(k).mean(axis=0) for k in range(1, ensemble.num_penalties + 1)],
                     axis=1)
    return util, power


def reproduce_paper(out_dir, *, runs: int = 200, v_list=(5.0, 50.0), seed: int = 0, variant: str = "printed",
                    config: RunConfig | None = None, progress=None, keep_traces: bool = False) -> dict:
    """Figure data for the built-in scenario: utility / power curves per V, LP line, bounds, mixing."""
    started = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config is None:
        config = scenario_config(engine={"seed": int(seed)}, runs=int(runs),
                                 v_list=[float(v) for v in v_list], bounds={"variant": variant})
    b = config.bounds
    baseline = solve_baseline(config.spec, config.schedule.limit, config.cover, nu=b["nu"],
                              x_max=b["lipschitz_x_max"], grid=b["lipschitz_grid"])
    lp_util = -baseline.p_opt
    prep = Prepared.build(config.spec, config.schedule, config.cover)
    K = config.spec.num_penalties
    T = config.engine.T
    t_col = np.arange(1, T + 1, dtype=float)
    util_rows, power_rows, bounds, mixing = [], [], [], []
    summary = {"lp_optimum_utility": lp_util, "lp_optimum_cover_utility": -baseline.cover_solution.value,
               "theorem2_gap": baseline.gap, "lipschitz": baseline.lipschitz, "i_star": baseline.i_star,
               "runs": config.runs, "seed": config.engine.seed, "variant": variant, "V": {}}
    for V in config.v_list:
        trace_dir = out / f"traces_V{V:g}" if keep_traces else None
        ens = run_ensemble(config, trace_dir, V=V, prepared=prep, progress=progress)
        util, power = curve_arrays(ens)
        util_rows.append(np.column_stack([np.full(T, V), t_col, util, np.full(T, lp_util)]))
        power_rows.append(np.column_stack([np.full(T, V), t_col, power, np.full(T, config.spec.constraints[0])]))
        bounds.extend(bound_records(config, ens, baseline, b["times"], V, variant))
        mixing.extend(mixing_records(ens, b["lags"], config.engine.D, config.engine.w, V=V))
        viol = sample_path_violations(ens, config.spec.constraints, config.engine.D,
                                      np.maximum(0.0, config.spec.p_max[1:] - config.spec.constraints),
                                      [t for t in b["times"] if t <= T])
        summary["V"][f"{V:g}"] = {
            "final_utility": float(util[-1]), "utility_gap": float(lp_util - util[-1]),
            "final_power": [float(x) for x in power[-1]],
            "sample_path_violations": len(viol),
            "mean_final_queue": [float(x) for x in ens.Q[:, -1].mean(axis=0)],
            "detection_error_rate": float(np.mean(ens.j_star[:, config.engine.D + config.engine.w:]
                                                  != baseline.i_star)),
            "wall_clock_s": ens.metadata["wall_clock_s"],
        }
    files = {
        "utility_vs_time.csv": write_csv(out / "utility_vs_time.csv", ["V", "t", "utility", "lp_optimum"],
                                         np.concatenate(util_rows)),
        "power_vs_time.csv": write_csv(out / "power_vs_time.csv",
                                       ["V", "t"] + [f"power_{k}" for k in range(1, K + 1)] + ["budget"],
                                       np.concatenate(power_rows)),
        "lp_optimum.csv": write_records(out / "lp_optimum.csv", [
            {"quantity": "utility", "value": lp_util},
            {"quantity": "cover_utility", "value": -baseline.cover_solution.value},
            {"quantity": "theorem2_gap", "value": baseline.gap},
            {"quantity": "lipschitz", "value": baseline.lipschitz}]),
        "bounds.csv": write_records(out / "bounds.csv", bounds, BOUND_HEADER),
        "mixing.csv": write_records(out / "mixing.csv", mixing,
                                    ["V", "k", "s", "beta_hat", "anchors", "min_expected_count"]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = {
        "package_version": __version__, "config_hash": config.hash, "config": config.raw, "complete": True,
        "float_format": FLOAT_FMT, "files": {k: {"rows": v} for k, v in sorted(files.items())},
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    manifest["files"]["summary.json"] = {"rows": 1}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("reproduction finished in %.1fs", time.perf_counter() - started)
    return summary



TAIL_OFFSETS = (0.01, 0.02, 0.05, 0.1, 0.2)


def verify_records(config: RunConfig, ensemble: TraceEnsemble, baseline, *, variant: str | None = None,
                   times=None, offsets=TAIL_OFFSETS) -> dict[str, list[dict]]:
    """Empirical-vs-theoretical comparisons on one ensemble.

    ``tail``: PAC bound vs empirical tail for every k, t and threshold offset.
    ``detection``: clipped P_e,up vs the fraction of runs with j* != i* per slot.
    ``sample_path``: queue-bound violations (both the loose and the exact slack).
    """
    variant = variant or config.bounds["variant"]
    times = [t for t in (times or config.bounds["times"]) if t <= ensemble.horizon]
    spec, eng = config.spec, config.engine
    levels = np.concatenate([[baseline.p_opt], spec.constraints])
    tail = []
    for t in times:
        for k in range(spec.num_penalties + 1):
            tail.extend(tail_comparison(ensemble, k, t, float(levels[k]), float(spec.u_max[k]), offsets,
                                        variant=variant, D=eng.D, w=eng.w))
    T = ensemble.horizon
    taus = np.arange(eng.D + eng.w - 1, T)
    det = []
    if len(config.cover) > 1:
        D_tau = divergence_series(config.schedule.matrix(0, T)[taus], config.cover, baseline.i_star)
        raw = detection_error_bound(D_tau, eng.w, zeta(config.cover), metric_entropy(config.cover), variant)
        emp = (ensemble.j_star[:, taus] != baseline.i_star).mean(axis=0)
        for tau, d, r, e in zip(taus, D_tau, raw, emp):
            det.append({"tau": int(tau), "D_tau": float(d), "bound_raw": float(r), "bound": clip01(float(r)),
                        "empirical": float(e), "holds": bool(e <= clip01(float(r)))})
    c = spec.constraints
    sp = []
    for name, slack in (("pmax_minus_c", np.maximum(0.0, spec.p_max[1:] - c)), ("c", c)):
        viol = sample_path_violations(ensemble, c, eng.D, slack, times)
        sp.append({"slack": name, "times": ";".join(map(str, times)), "violations": len(viol),
                   "max_excess": max((v[3] for v in viol), default=0.0)})
    return {"tail": tail, "detection": det, "sample_path": sp}


def write_verify(out_dir, records: dict[str, list[dict]], V=None) -> dict[str, int]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "" if V is None else f"_V{V:g}"
    return {f"verify_{name}{suffix}.csv": write_records(out / f"verify_{name}{suffix}.csv", recs)
            for name, recs in records.items()}
