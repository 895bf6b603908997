"""Command-line front end: ``simulate``, ``run``, ``compare``, ``hist``.

Exit codes: 0 success, 2 configuration error, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from racemtt.config import ConfigError
from racemtt.evaluation import (RunConfig, compare, dump_json, format_compare, histogram_export,
                                load_scenario, load_summary, read_errors_csv, run)
from racemtt.sim import ScenarioError, default_sensors, simulate, write_stream_csv, write_truth_csv

EXIT_CONFIG = 2
EXIT_INPUT = 3


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} must look like key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def build_run_config(args) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise FileNotFoundError(str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    for text in args.set or []:
        key, value = _parse_override(text)
        _set_path(data, key, value)
    if getattr(args, "scenario", None):
        data["scenario"] = args.scenario
    if getattr(args, "out", None):
        data["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "stream", None):
        data["stream"] = args.stream
    if getattr(args, "truth", None):
        data["truth"] = args.truth
    if getattr(args, "no_delay_compensation", False):
        _set_path(data, "engine.delay_compensation", False)
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = build_run_config(args)
    scenario = load_scenario(cfg.scenario)
    if cfg.seed is not None:
        scenario.seed = cfg.seed
    sensors = cfg.sensors if cfg.sensors is not None else default_sensors(
        noise=not args.noiseless, delay=not args.no_delay)
    records, truth = simulate(scenario, sensors)
    out = Path(cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_stream_csv(records, out / "stream.csv")
    write_truth_csv(truth, out / "truth.csv")
    scenario.save_json(out / "scenario.json")
    print(f"{len(records)} measurements, {len(truth.t)} truth samples -> {out}")
    return 0


def cmd_run(args) -> int:
    cfg = build_run_config(args)
    if cfg.output_dir is None:
        cfg.output_dir = "results"
    bundle = run(cfg)
    m = bundle.summary["metrics"]
    for source in ("raw_lidar", "raw_radar", "tracked"):
        pos = m[source]["e_pos"]
        if pos["count"]:
            print(f"{source:10s} pos rmse {pos['rmse']:.4f} m  (n={pos['count']})")
    tr = m["tracked"]
    if tr["e_v"]["count"]:
        print(f"tracked    speed rmse {tr['e_v']['rmse']:.4f} m/s  heading rmse {tr['e_theta']['rmse']:.5f} rad")
    if bundle.timing:
        print(f"cycle time mean {bundle.timing['mean_ms']:.3f} ms  p99 {bundle.timing['p99_ms']:.3f} ms")
    print(f"results -> {cfg.output_dir}")
    return 0


def cmd_compare(args) -> int:
    a = load_summary(args.bundle_a)
    b = load_summary(args.bundle_b)
    try:
        report = compare(a, b)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_INPUT
    print(format_compare(report))
    if args.out:
        dump_json(report, args.out)
    return 0


def cmd_hist(args) -> int:
    src = Path(args.bundle)
    records = read_errors_csv(src / "errors.csv" if src.is_dir() else src)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out.mkdir(parents=True, exist_ok=True)
    histogram_export(records, args.bins, out)
    print(f"histograms and ellipses -> {out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="racemtt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--scenario", help="builtin scenario name or scenario JSON path")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, dotted for nesting (engine.gate=10)")

    sp = sub.add_parser("simulate", help="write a measurement stream and ground truth")
    common(sp)
    sp.add_argument("--noiseless", action="store_true")
    sp.add_argument("--no-delay", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="track a scenario and score it")
    common(sp)
    sp.add_argument("--stream", help="recorded measurement CSV instead of simulating")
    sp.add_argument("--truth", help="ground-truth CSV matching --stream")
    sp.add_argument("--no-delay-compensation", action="store_true",
                    help="emit tracks at engine time instead of predicting to the current time")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="per-channel RMSE deltas between two result bundles")
    sp.add_argument("bundle_a")
    sp.add_argument("bundle_b")
    sp.add_argument("--out", help="write the report JSON here")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("hist", help="binned error histograms and 1-sigma ellipses")
    sp.add_argument("bundle", help="result directory or errors.csv")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_hist)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError, ScenarioError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
