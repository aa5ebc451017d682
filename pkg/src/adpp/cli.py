"""Command-line entry point: ``adpp <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input (bad flags, config or unknown
subcommand), 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import VARIANTS, InsufficientRuns
from .config import ConfigError, RunConfig, build_config, load_config
from .harness import (BOUND_HEADER, bound_records, config_from_manifest, load_traces, mixing_records,
                      reproduce_paper, run_ensemble, verify_records, write_records, write_verify)
from .lp import solve_baseline
from .scenario import NAME as SCENARIO_NAME

log = logging.getLogger("adpp")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("lags must be positive integers")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("V values must be non-negative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adpp", description="Approximate drift-plus-penalty simulator, LP baseline and bound checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def source(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", type=Path, help="JSON run configuration")
        g.add_argument("--scenario", choices=[SCENARIO_NAME], help="built-in scenario preset")

    def common(sp, out_help="output directory"):
        sp.add_argument("--runs", type=int, help="ensemble size R (default from config, else 200)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", type=Path, help=out_help)
        sp.add_argument("--v-list", type=_float_list, help="comma-separated V values, e.g. 5,50")
        sp.add_argument("--bound-variant", choices=VARIANTS, help="bound expressions to evaluate")

    sp = sub.add_parser("solve-baseline", help="solve the baseline LP and report the covering gap")
    source(sp)
    sp.add_argument("--bound-variant", choices=VARIANTS, help=argparse.SUPPRESS)
    sp.add_argument("--out", type=Path, help="write baseline.json here")

    sp = sub.add_parser("simulate", help="run a seeded ensemble and write trace CSVs plus a manifest")
    source(sp)
    common(sp, "trace directory (default: config output_dir or ./traces)")

    sp = sub.add_parser("analyze", help="mixing estimates and bound report from stored traces")
    sp.add_argument("--traces", type=Path, required=True, help="directory written by 'simulate'")
    sp.add_argument("--lags", type=_int_list, help="comma-separated lags, e.g. 1,5,10,50")
    sp.add_argument("--out", type=Path, help="output directory (default: the trace directory)")
    sp.add_argument("--bound-variant", choices=VARIANTS)

    sp = sub.add_parser("verify-bounds", help="compare empirical frequencies with the theoretical bounds")
    source(sp)
    sp.add_argument("--traces", type=Path, help="use stored traces instead of simulating")
    sp.add_argument("--lags", type=_int_list, help=argparse.SUPPRESS)
    common(sp, "output directory for verify_*.csv")

    sp = sub.add_parser("reproduce-paper", help="figure data for the built-in three-sensor scenario")
    common(sp, "output directory (default ./reproduction)")
    return p


def _resolve(args) -> RunConfig:
    if getattr(args, "config", None) is not None:
        cfg = load_config(args.config)
        raw = dict(cfg.raw)
        base = args.config.parent
    else:
        raw = {"schema_version": 1, "scenario": getattr(args, "scenario", None) or SCENARIO_NAME}
        base = Path(".")
    overrides = False
    if getattr(args, "runs", None) is not None:
        raw["runs"] = args.runs
        overrides = True
    if getattr(args, "seed", None) is not None:
        raw["engine"] = {**raw.get("engine", {}), "seed": args.seed}
        overrides = True
    if getattr(args, "v_list", None):
        raw["v_list"] = args.v_list
        overrides = True
    if getattr(args, "bound_variant", None):
        raw["bounds"] = {**raw.get("bounds", {}), "variant": args.bound_variant}
        overrides = True
    if getattr(args, "config", None) is not None and not overrides:
        return cfg
    return build_config(raw, base)


def _progress(done, total):
    log.info("%d/%d runs", done, total)


def cmd_solve_baseline(args) -> int:
    cfg = _resolve(args)
    started = time.perf_counter()
    b = cfg.bounds
    rep = solve_baseline(cfg.spec, cfg.schedule.limit, cfg.cover, nu=b["nu"], x_max=b["lipschitz_x_max"],
                         grid=b["lipschitz_grid"])
    wall = time.perf_counter() - started
    result = {
        "strategies": int(rep.limit_solution.theta.size) if rep.limit_solution.theta is not None else None,
        "lp_optimum_cost": rep.p_opt, "lp_optimum_utility": -rep.p_opt,
        "cover_index": rep.i_star, "cover_distance": rep.distance,
        "cover_lp_cost": rep.cover_solution.value, "lipschitz": rep.lipschitz, "nu": rep.nu,
        "b_max": rep.b_max, "theorem2_gap": rep.gap, "gap_holds": rep.gap_holds,
        "support": [int(i) for i in rep.limit_solution.support], "seconds": round(wall, 3),
    }
    print(f"LP optimum (utility): {-rep.p_opt:.6f}")
    print(f"LP optimum (cost p0): {rep.p_opt:.6f}")
    print(f"strategies: {result['strategies']}, status: {rep.limit_solution.status}, support: {result['support']}")
    print(f"nearest cover member: {rep.i_star} (L1 distance {rep.distance:.6g}), cover LP cost {rep.cover_solution.value:.6f}")
    print(f"Lipschitz estimate c = {rep.lipschitz:.6g}, covering gap (c+1) b_max (d+nu) = {rep.gap:.6g}, "
          f"holds: {rep.gap_holds}")
    print(f"solved in {wall:.2f}s")
    if args.out:
        path = args.out if args.out.suffix == ".json" else args.out / "baseline.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    out = args.out or Path(cfg.output_dir or "traces")
    v_values = list(cfg.v_list) if args.v_list else [cfg.engine.V]
    for V in v_values:
        target = out if len(v_values) == 1 else out / f"V{V:g}"
        ens = run_ensemble(cfg, target, V=V, progress=_progress)
        print(f"V={V:g}: {ens.runs} runs x {ens.horizon} slots -> {target} ({ens.metadata['wall_clock_s']:.1f}s)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = config_from_manifest(args.traces)
    ens = load_traces(args.traces)
    out = args.out or args.traces
    out.mkdir(parents=True, exist_ok=True)
    lags = args.lags or cfg.bounds["lags"]
    V = ens.metadata["V"]
    D, w = cfg.engine.D, cfg.engine.w
    n = write_records(out / "mixing.csv", mixing_records(ens, lags, D, w),
                      ["k", "s", "beta_hat", "anchors", "min_expected_count"])
    print(f"mixing estimates: {n} rows -> {out / 'mixing.csv'}")
    if V > 0:
        b = cfg.bounds
        base = solve_baseline(cfg.spec, cfg.schedule.limit, cfg.cover, nu=b["nu"], x_max=b["lipschitz_x_max"],
                              grid=b["lipschitz_grid"])
        rows = bound_records(cfg, ens, base, b["times"], V, args.bound_variant)
        n = write_records(out / "bounds.csv", rows, BOUND_HEADER)
        print(f"bound report: {n} rows -> {out / 'bounds.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.traces is not None:
        cfg = config_from_manifest(args.traces)
        if args.bound_variant:
            cfg.bounds["variant"] = args.bound_variant
        ensembles = [(load_traces(args.traces), None)]
        out = args.out or args.traces
    else:
        cfg = _resolve(args)
        out = args.out or Path("verify")
        vs = list(cfg.v_list) if args.v_list else [cfg.engine.V]
        ensembles = [(run_ensemble(cfg, None, V=V, progress=_progress), V) for V in vs]
    b = cfg.bounds
    base = solve_baseline(cfg.spec, cfg.schedule.limit, cfg.cover, nu=b["nu"], x_max=b["lipschitz_x_max"],
                          grid=b["lipschitz_grid"])
    for ens, V in ensembles:
        recs = verify_records(cfg, ens, base)
        write_verify(out, recs, V)
        tail = [r for r in recs["tail"] if r["bound"] < 0.9]
        bad = [r for r in tail if not r["holds"]]
        det = [r for r in recs["detection"] if r["bound"] < 0.9]
        det_bad = [r for r in det if not r["holds"]]
        label = f"V={ens.metadata['V']:g}"
        print(f"{label}: tail bound informative at {len(tail)}/{len(recs['tail'])} thresholds, "
              f"{len(bad)} exceeded")
        print(f"{label}: detection bound informative at {len(det)}/{len(recs['detection'])} slots, "
              f"{len(det_bad)} exceeded")
        for r in recs["sample_path"]:
            print(f"{label}: sample-path queue bound (slack {r['slack']}): {r['violations']} violations")
    print(f"details -> {out}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    raw = {"schema_version": 1, "scenario": SCENARIO_NAME}
    if args.runs is not None:
        raw["runs"] = args.runs
    if args.seed is not None:
        raw["engine"] = {"seed": args.seed}
    if args.v_list:
        raw["v_list"] = args.v_list
    if args.bound_variant:
        raw["bounds"] = {"variant": args.bound_variant}
    cfg = build_config(raw)
    out = args.out or Path("reproduction")
    summary = reproduce_paper(out, config=cfg, variant=cfg.variant, progress=_progress)
    print(f"LP optimum (utility): {summary['lp_optimum_utility']:.6f}")
    for V, s in summary["V"].items():
        power = ", ".join(f"{x:.4f}" for x in s["final_power"])
        print(f"V={V}: utility {s['final_utility']:.4f} (gap {s['utility_gap']:.4f}), power [{power}]")
    print(f"figure data -> {out}")
    return EXIT_OK


COMMANDS = {
    "solve-baseline": cmd_solve_baseline,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "verify-bounds": cmd_verify,
    "reproduce-paper": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for msg in exc.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, InsufficientRuns) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
