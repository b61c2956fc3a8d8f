"""Command-line front end: predict, simulate, sweep, advise, bench, calibrate.

Exit status: 0 success, 2 invalid input, 3 solver non-convergence,
64 usage error, 69 hardware harness unavailable, 74 unwritable output.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Sequence

import numpy as np

from . import advisor, avg, markov, multistage, report, simulator
from .core import ConvergenceError, PlatformParams, ValidationError, WorkloadParams, load_params

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_USAGE = 64
EXIT_UNAVAILABLE = 69
EXIT_IO = 74

SEED_ENV = "LFPERF_SEED"

PREDICT_COLUMNS = ["pw", "throughput", "fails", "trl", "mode"]
SIM_COLUMNS = ["pw", "cw", "P", "cc", "rc", "pw_dist", "cw_dist", "seed",
               "throughput", "fails_per_success", "occupancy", "stderr_throughput"]
SWEEP_COLUMNS = ["pw", "cw", "P", "model", "throughput_model", "throughput_sim", "stderr_sim",
                 "rel_error", "fails_model", "fails_sim"]
BENCH_COLUMNS = SIM_COLUMNS + ["source"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:n[:log|:lin]``; log spacing is the default."""
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ValidationError("pw-grid", f"expected lo:hi:n:log, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError("pw-grid", f"expected lo:hi:n:log, got {text!r}") from None
    scale = parts[3] if len(parts) == 4 else "log"
    if n < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi < lo:
        raise ValidationError("pw-grid", "need 0 <= lo <= hi and n >= 1")
    if scale == "log":
        if lo <= 0:
            raise ValidationError("pw-grid", "log grid needs lo > 0")
        return np.logspace(math.log10(lo), math.log10(hi), n)
    if scale == "lin":
        return np.linspace(lo, hi, n)
    raise ValidationError("pw-grid", f"unknown spacing {scale!r} (log or lin)")


def resolve_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise ValidationError(SEED_ENV, f"not an integer: {env!r}") from None


def _grid_or_single(args, workload: WorkloadParams) -> list[float]:
    if args.pw_grid:
        return [float(x) for x in parse_grid(args.pw_grid)]
    return [workload.pw_mean]


def _predict(model: str, platform: PlatformParams, workload: WorkloadParams, stages):
    if model == "avg":
        return avg.predict_avg(platform, workload)
    if model == "markov":
        return markov.predict_markov(platform, workload)[0]
    return multistage.predict_multistage(platform, workload, stages)


def _stages(args, workload: WorkloadParams, platform: PlatformParams):
    if args.model != "multistage":
        return None
    if args.stages:
        return multistage.load_stages(args.stages)
    return [multistage.StageSpec(platform.rc, workload.cw_mean, platform.cc)]


def cmd_predict(args) -> int:
    params = load_params(args.params)
    platform, workload = params.platform, params.workload
    stages = _stages(args, workload, platform)
    rows = []
    for pw in _grid_or_single(args, workload):
        pred = _predict(args.model, platform, workload.with_pw(pw), stages)
        rows.append({"pw": pw, "throughput": pred.throughput, "fails": pred.fails_per_success,
                     "trl": pred.mean_retry_occupancy, "mode": pred.mode.value})
    report.emit_report(rows, args.format, args.out, PREDICT_COLUMNS)
    if args.summary:
        report.write_json({"command": "predict", "model": args.model, "rows": len(rows),
                           "upper_bound": [avg.upper_bound(platform, workload.with_pw(r["pw"])) for r in rows]},
                          args.summary)
    return EXIT_OK


def _sim_configs(args, platform, workload) -> list[simulator.SimConfig]:
    seed = resolve_seed(args.seed)
    return [simulator.SimConfig(platform, workload.with_pw(pw), seed=seed,
                                warmup_successes=args.warmup, measured_successes=args.successes,
                                backoff=args.backoff)
            for pw in _grid_or_single(args, workload)]


def sim_row(cfg: simulator.SimConfig, stats: simulator.SimStats) -> dict:
    w, p = cfg.workload, cfg.platform
    return {"pw": w.pw_mean, "cw": w.cw_mean, "P": p.P, "cc": p.cc, "rc": p.rc,
            "pw_dist": w.pw_dist.kind.value, "cw_dist": w.cw_dist.kind.value, "seed": cfg.seed,
            "throughput": stats.throughput, "fails_per_success": stats.fails_per_success,
            "occupancy": stats.mean_retry_occupancy, "stderr_throughput": stats.stderr_throughput}


def _run_sims(args, configs):
    # one config keeps its seed; a grid derives per-point seeds from it
    if len(configs) == 1:
        return [(configs[0], simulator.run(configs[0]))]
    return simulator.sweep(configs, base_seed=configs[0].seed, workers=args.workers)


def cmd_simulate(args) -> int:
    params = load_params(args.params)
    configs = _sim_configs(args, params.platform, params.workload)
    results = _run_sims(args, configs)
    rows = [sim_row(c, s) for c, s in results]
    report.emit_report(rows, args.format, args.out, SIM_COLUMNS)
    if args.summary:
        report.write_json({"command": "simulate", "rows": len(rows),
                           "successes_per_point": args.successes}, args.summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    params = load_params(args.params)
    platform, workload = params.platform, params.workload
    stages = _stages(args, workload, platform)
    configs = _sim_configs(args, platform, workload)
    results = _run_sims(args, configs)
    rows = []
    for cfg, stats in results:
        pred = _predict(args.model, platform, cfg.workload, stages)
        rows.append({
            "pw": cfg.workload.pw_mean, "cw": cfg.workload.cw_mean, "P": platform.P,
            "model": args.model, "throughput_model": pred.throughput,
            "throughput_sim": stats.throughput, "stderr_sim": stats.stderr_throughput,
            "rel_error": (pred.throughput - stats.throughput) / stats.throughput,
            "fails_model": pred.fails_per_success, "fails_sim": stats.fails_per_success,
        })
    report.emit_report(rows, args.format, args.out, SWEEP_COLUMNS)
    if args.summary:
        errs = [abs(r["rel_error"]) for r in rows]
        report.write_json({"command": "sweep", "model": args.model, "rows": len(rows),
                           "max_abs_rel_error": max(errs)}, args.summary)
    return EXIT_OK


def _parse_window(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError("fails-window", "comma-separated numbers expected") from None
    if not values or any(v < 0 or not math.isfinite(v) for v in values):
        raise ValidationError("fails-window", "nonempty list of values >= 0 expected")
    return values


def cmd_advise(args) -> int:
    params = load_params(args.params)
    platform, workload = params.platform, params.workload
    if not (args.backoff or args.mm):
        args.backoff = True
    if args.mm and not (args.quantum and args.quantum > 0):
        raise ValidationError("quantum", "--mm needs --quantum > 0")
    try:
        rep = advisor.advisory_report(platform, workload, args.model,
                                      quantum_work=args.quantum if args.mm else None,
                                      k_max=args.k_max, list_threshold=args.list_threshold)
        if args.fails_window:
            adv = advisor.adaptive_backoff(_parse_window(args.fails_window), platform,
                                           workload.cw_mean, args.model, template=workload)
            rep["adaptive_backoff_uow"] = adv.backoff
            rep["pw_estimate"] = adv.pw_estimate
            rep["flags"] = sorted(set(rep["flags"]) | set(adv.flags))
    except markov.UnsupportedWorkload as exc:
        raise ValidationError("model", str(exc)) from None
    if not args.backoff:
        rep["backoff_uow"] = None
        rep["backoff_cycles"] = None
    report.write_json(rep, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import harness

    if args.params:
        params = load_params(args.params)
        platform, workload = params.platform, params.workload
    else:
        platform = PlatformParams(args.threads)
        workload = WorkloadParams(1.0, 0.0)
    stats = harness.bench(args.structure, args.threads, workload, backoff=args.backoff,
                          duration=args.duration, unit_cycles=platform.unit_cycles,
                          pin=not args.no_pin, seed=resolve_seed(args.seed),
                          stride=args.stride, allow_oversubscribe=args.oversubscribe)
    row = harness.bench_row(stats, workload, platform, resolve_seed(args.seed))
    report.emit_report([row], args.format, args.out, BENCH_COLUMNS)
    if args.summary:
        report.write_json({
            "command": "bench", "structure": stats.structure, "threads": stats.threads,
            "ops_per_second": stats.throughput_ops, "successes": stats.successes,
            "failures": stats.failures, "conservation_ok": stats.conservation_ok,
            "flags": stats.flags,
        }, args.summary)
    return EXIT_OK if stats.conservation_ok else 1


def cmd_calibrate(args) -> int:
    from . import harness

    cal = harness.calibrate(trials=args.trials)
    report.write_json(cal.platform_json(args.P), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lfperf", description="Throughput models for CAS-based lock-free structures.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def outputs(p, fmt=True):
        p.add_argument("--out", "-o", default="-", help="output file (default stdout)")
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")
            p.add_argument("--summary", help="JSON summary file")

    def sim_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--successes", type=int, default=20_000, help="measured successes per point")
        p.add_argument("--warmup", type=int, default=2_000)
        p.add_argument("--backoff", type=float, default=0.0, help="uow added to each parallel section")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("predict", help="model throughput over a pw grid")
    p.add_argument("--model", choices=("avg", "markov", "multistage"), default="avg")
    p.add_argument("--params", required=True)
    p.add_argument("--pw-grid", help="lo:hi:n:log")
    p.add_argument("--stages", help="stage JSON for --model multistage")
    outputs(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    p.add_argument("--params", required=True)
    p.add_argument("--pw-grid", help="lo:hi:n:log")
    sim_flags(p)
    outputs(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="model and simulator side by side")
    p.add_argument("--model", choices=("avg", "markov", "multistage"), default="avg")
    p.add_argument("--params", required=True)
    p.add_argument("--pw-grid", help="lo:hi:n:log")
    p.add_argument("--stages", help="stage JSON for --model multistage")
    sim_flags(p)
    outputs(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("advise", help="back-off and memory-management advice (JSON)")
    p.add_argument("--params", required=True)
    p.add_argument("--model", choices=("avg", "markov"), default="avg")
    p.add_argument("--backoff", action="store_true", help="constant back-off advice")
    p.add_argument("--mm", action="store_true", help="memory-management granularity")
    p.add_argument("--quantum", type=float, help="uow of one reclamation quantum")
    p.add_argument("--k-max", type=int, default=100)
    p.add_argument("--list-threshold", type=int, help="deferred-list cap, passed through")
    p.add_argument("--fails-window", help="comma-separated recent failures per success")
    outputs(p, fmt=False)
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("bench", help="hardware micro-benchmark")
    p.add_argument("--structure", choices=harness_structures(), default="counter")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--params", help="workload (pw, cw) and unit_cycles")
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--backoff", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--no-pin", action="store_true")
    p.add_argument("--oversubscribe", action="store_true", help="allow more threads than CPUs")
    outputs(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", help="measure cc and rc; writes a platform JSON")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--P", type=int, help="thread count for the emitted file")
    outputs(p, fmt=False)
    p.set_defaults(func=cmd_calibrate)
    return parser


def harness_structures() -> tuple[str, ...]:
    return ("counter", "stack")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"lfperf: invalid {exc.field}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"lfperf: no convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except report.ReportError as exc:
        print(f"lfperf: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (markov.UnsupportedWorkload, ValueError) as exc:
        print(f"lfperf: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        from .harness import HarnessError
        if isinstance(exc, HarnessError):
            print(f"lfperf: {exc}", file=sys.stderr)
            return EXIT_UNAVAILABLE
        raise


if __name__ == "__main__":
    sys.exit(main())
