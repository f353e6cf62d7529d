"""Command-line front end: experiment configuration, execution and CSV/JSON
result emission.

Subcommands: calibrate, probe-window, hammer, tune, validate-trace.
Exit codes: 0 success, 1 experiment-level failure, 2 usage or config error.
All output durations are picosecond integers; every run is reproducible from
config plus seed (a timestamped metadata block can be disabled with
--no-meta so outputs are byte-identical).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from .attacker import (BatchPattern, TimingParams, check_conditions,
                       reproduced_fraction, run_hammer, run_profile,
                       synthesize, tune)
from .config import ConfigError, ExperimentConfig
from .probe import ProbeOptions, ProbeResult, Prober, write_curve_csv
from .units import MS, fmt_ns, parse_duration
from .validate import TraceError, validate_trace

USAGE_ERROR = 2
EXPERIMENT_ERROR = 1


class CliError(Exception):
    def __init__(self, message: str, code: int = USAGE_ERROR):
        super().__init__(message)
        self.code = code


def _load_config(args) -> ExperimentConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise CliError(f"config file not found: {args.config}")
        try:
            cfg = ExperimentConfig.load(args.config)
        except ConfigError as exc:
            raise CliError(f"bad config: {exc}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
    else:
        cfg = ExperimentConfig.from_dict({"seed": args.seed if args.seed
                                          is not None else 0})
    if args.seed is not None:
        cfg.seed = args.seed
    out = os.environ.get("HAMMERSIM_OUT")
    if args.out:
        out = args.out
    if out:
        cfg.output_dir = out
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg


def _write_json(path: str, payload: dict, no_meta: bool) -> None:
    if not no_meta:
        payload = dict(payload)
        payload["meta"] = {"tool": f"hammersim {__version__}",
                           "written_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    options = ProbeOptions()
    if args.horizon_ms is not None:
        options.horizon_cap = int(args.horizon_ms * MS)
    prober = Prober(cfg, options)
    period = prober.calibrate_max_rate()
    low_confidence = not prober.horizon_confident(period)
    report = {
        "max_stable_period_ps": period,
        "max_stable_period_ns": fmt_ns(period),
        "horizon_cap_ps": options.horizon_cap,
        "low_confidence": low_confidence,
        "seed": cfg.seed,
    }
    path = os.path.join(cfg.output_dir, "calibration.json")
    _write_json(path, report, args.no_meta)
    print(f"max stable period: {fmt_ns(period)} ns"
          + (" (low confidence)" if low_confidence else ""))
    print(f"wrote {path}")
    return 0


def cmd_probe_window(args) -> int:
    cfg = _load_config(args)
    if not args.b or any(b < 1 for b in args.b):
        raise CliError("--b must give bank counts >= 1")
    if args.r_max < 1:
        raise CliError("--r-max must be >= 1")
    options = ProbeOptions()
    if args.horizon_ms is not None:
        options.horizon_cap = int(args.horizon_ms * MS)
    prober = Prober(cfg, options)
    result = ProbeResult(max_stable_period=prober.calibrate_max_rate())
    for b in args.b:
        curve = prober.curve(b, range(1, args.r_max + 1))
        result.curves[b] = curve
        path = os.path.join(cfg.output_dir, f"probe_curve_b{b}.csv")
        write_curve_csv(path, b, curve)
        print(f"wrote {path}")
    if args.infer_window:
        prober.infer_window(result)
    path = os.path.join(cfg.output_dir, "probe_summary.json")
    _write_json(path, result.to_json(), args.no_meta)
    if result.window_estimate is not None:
        print(f"window estimate: {result.window_estimate}")
    print(f"wrote {path}")
    return 0


def _load_pattern(path: str) -> BatchPattern:
    if not os.path.exists(path):
        raise CliError(f"pattern file not found: {path}")
    try:
        return BatchPattern.load(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed pattern file {path}: {exc}") from exc


def cmd_hammer(args) -> int:
    cfg = _load_config(args)
    duration = int(args.duration_ms * MS)
    if duration <= 0:
        raise CliError("--duration-ms must be positive")
    if args.pattern:
        pattern = _load_pattern(args.pattern)
    else:
        if args.r < 1 or args.b < 1:
            raise CliError("--b and --r must be >= 1")
        timing = TimingParams(parse_duration(args.delta_p),
                              parse_duration(args.delta_b), args.b * args.r)
        try:
            pattern = synthesize(cfg, args.b, args.r, timing)
        except ValueError as exc:
            raise CliError(f"cannot synthesize pattern: {exc}",
                           EXPERIMENT_ERROR) from exc
        pattern.save(os.path.join(cfg.output_dir, "pattern.json"))
    profile = None
    if args.profile:
        profile = run_profile(cfg, pattern, duration)
    trr_override = False if args.trr_off else None
    report = run_hammer(cfg, pattern, duration, trr_override=trr_override,
                        profile=profile)
    c1, c2, c3 = check_conditions(pattern.timing, cfg.dimm.timings, pattern.b)
    payload = report.to_json()
    payload["conditions"] = {"c1_rate_below_serviceable": c1,
                             "c2_batch_gap": c2, "c3_burst": c3}
    json_path = os.path.join(cfg.output_dir, "flips.json")
    csv_path = os.path.join(cfg.output_dir, "flips.csv")
    _write_json(json_path, payload, args.no_meta)
    report.save_csv(csv_path)
    print(f"{len(report.flips)} bitflips on {len(report.victim_rows())} rows; "
          f"wrote {json_path} and {csv_path}")
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    if args.budget < 1:
        raise CliError("--budget must be >= 1")
    if not os.path.exists(args.grid):
        raise CliError(f"grid file not found: {args.grid}")
    try:
        with open(args.grid) as fh:
            spec = json.load(fh)
        points = [(int(b), int(r), parse_duration(dp), parse_duration(db))
                  for b in spec["b"] for r in spec["r"]
                  for dp in spec["delta_p"] for db in spec["delta_b"]]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed grid file {args.grid}: {exc}") from exc
    if not points:
        raise CliError("tuning grid is empty")
    duration = int(args.duration_ms * MS)
    results = tune(cfg, points, args.budget, duration=duration,
                   jobs=args.jobs)
    path = os.path.join(cfg.output_dir, "tune_results.csv")
    with open(path, "w") as fh:
        fh.write("rank,B,R,delta_p_ps,delta_b_ps,c1,c2,c3,"
                 "flips,reproduced_fraction\n")
        for rank, tp in enumerate(results, 1):
            c1, c2, c3 = tp.conditions
            fh.write(f"{rank},{tp.b},{tp.r},{tp.delta_p},{tp.delta_b},"
                     f"{int(c1)},{int(c2)},{int(c3)},{tp.flips},"
                     f"{tp.reproduced:.6f}\n")
    best = results[0]
    print(f"best: B={best.b} R={best.r} delta_p={fmt_ns(best.delta_p)}ns "
          f"delta_b={fmt_ns(best.delta_b)}ns "
          f"({best.flips} flips, reproduced {best.reproduced:.2f})")
    print(f"wrote {path}")
    return 0


def cmd_validate_trace(args) -> int:
    cfg = _load_config(args)
    if not os.path.exists(args.trace):
        raise CliError(f"trace file not found: {args.trace}")
    try:
        count = validate_trace(args.trace, cfg.dimm.timings)
    except TraceError as exc:
        print(f"trace invalid: {exc}", file=sys.stderr)
        return EXPERIMENT_ERROR
    print(f"trace ok: {count} commands")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hammersim",
        description="Deterministic peripheral-to-DRAM disturbance simulator "
                    "and controller probing tools")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (or HAMMERSIM_OUT)")
    common.add_argument("--no-meta", action="store_true",
                        help="omit timestamped metadata from JSON outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common],
                       help="find the maximum stable transmission rate")
    p.add_argument("--horizon-ms", type=float,
                   help="cap the stability horizon (may lower confidence)")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("probe-window", parents=[common],
                       help="serviceable-rate curves over unique-row batches")
    p.add_argument("--b", type=int, action="append",
                   help="bank count per batch (repeatable)")
    p.add_argument("--r-max", type=int, default=32)
    p.add_argument("--horizon-ms", type=float)
    p.add_argument("--infer-window", action="store_true",
                   help="also infer the look-ahead window size")
    p.set_defaults(fn=cmd_probe_window)

    p = sub.add_parser("hammer", parents=[common],
                       help="stream a hammering pattern and report bitflips")
    p.add_argument("--pattern", help="pattern JSON (else synthesized)")
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--r", type=int, default=9)
    p.add_argument("--delta-p", dest="delta_p", default="40")
    p.add_argument("--delta-b", dest="delta_b", default="104")
    p.add_argument("--duration-ms", type=float, default=64.0)
    p.add_argument("--trr-off", action="store_true",
                   help="disable the mitigation sampler")
    p.add_argument("--profile", action="store_true",
                   help="also run the native profile for reproduction stats")
    p.set_defaults(fn=cmd_hammer)

    p = sub.add_parser("tune", parents=[common],
                       help="rank timing-parameter grid points by efficacy")
    p.add_argument("--grid", required=True,
                   help='JSON {"b": [...], "r": [...], "delta_p": [...], '
                        '"delta_b": [...]}')
    p.add_argument("--budget", type=int, default=64,
                   help="maximum number of grid points to evaluate")
    p.add_argument("--duration-ms", type=float, default=16.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("validate-trace", parents=[common],
                       help="check a command trace against the bank timings")
    p.add_argument("--trace", required=True, help="CSV time_ps,bank,cmd,row")
    p.set_defaults(fn=cmd_validate_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
