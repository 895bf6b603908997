"""Scenario runs, ego-frame error metrics and result bundles."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from racemtt.config import ConfigError, EngineConfig
from racemtt.engine import TrackingEngine
from racemtt.measurement import Sensor, local_to_global
from racemtt.motion import wrap_angle
from racemtt.sim import (GroundTruthLog, Scenario, SensorSpec, StreamRecord, builtin_scenarios,
                         default_sensors, read_stream_csv, read_truth_csv, simulate)

SOURCES = ("raw_lidar", "raw_radar", "tracked")
CHANNELS = ("e_long", "e_lat", "e_v", "e_theta")
ERROR_HEADER = ["t", "track_id", "e_long", "e_lat", "e_v", "e_theta", "source"]


@dataclass
class ErrorRecord:
    t: float
    track_id: int
    e_long: float
    e_lat: float
    e_v: float
    e_theta: float
    source: str


@dataclass
class RunConfig:
    scenario: str = "oval-overtake"
    engine: EngineConfig = field(default_factory=EngineConfig)
    sensors: list[SensorSpec] | None = None
    output_dir: str | None = None
    seed: int | None = None
    stream: str | None = None
    truth: str | None = None
    convergence_time: float = 2.0
    match_radius: float = 10.0
    hist_bins: int = 50

    def __post_init__(self):
        if self.convergence_time < 0:
            raise ConfigError("convergence_time must be non-negative")
        if self.match_radius <= 0:
            raise ConfigError("match_radius must be positive")
        if self.hist_bins < 1:
            raise ConfigError("hist_bins must be at least 1")
        if (self.stream is None) != (self.truth is None):
            raise ConfigError("a recorded stream needs its truth file and vice versa")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {"scenario", "engine", "sensors", "output_dir", "seed", "stream", "truth",
                 "convergence_time", "match_radius", "hist_bins"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        data["engine"] = EngineConfig.from_dict(data.get("engine", {}))
        if data.get("sensors") is not None:
            try:
                data["sensors"] = [SensorSpec.from_dict(s) for s in data["sensors"]]
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid sensor spec: {exc}") from None
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "engine": self.engine.to_dict(),
            "sensors": None if self.sensors is None else [s.to_dict() for s in self.sensors],
            "output_dir": self.output_dir,
            "seed": self.seed,
            "stream": self.stream,
            "truth": self.truth,
            "convergence_time": self.convergence_time,
            "match_radius": self.match_radius,
            "hist_bins": self.hist_bins,
        }


@dataclass
class ResultBundle:
    records: list[ErrorRecord]
    summary: dict
    timing: dict
    histograms: dict = field(default_factory=dict)
    ellipses: dict = field(default_factory=dict)


def load_scenario(name_or_path: str) -> Scenario:
    builtins = builtin_scenarios()
    if name_or_path in builtins:
        return builtins[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"no builtin scenario or file named {name_or_path!r}")
    return Scenario.from_json(path)


def ego_frame_error(est_xy, true_xy, ego_theta: float) -> tuple[float, float]:
    """Global position error rotated into the ego frame (longitudinal, lateral)."""
    ex, ey = est_xy[0] - true_xy[0], est_xy[1] - true_xy[1]
    c, s = math.cos(ego_theta), math.sin(ego_theta)
    return c * ex + s * ey, -s * ex + c * ey


def _nearest_opponent(truth: GroundTruthLog, t: float, xy, radius: float):
    best, best_d = None, radius
    for k in range(truth.opponents.shape[0]):
        st = truth.opponent_at(k, t)
        d = math.hypot(xy[0] - st[0], xy[1] - st[1])
        if d <= best_d:
            best, best_d = st, d
    return best


def raw_errors(records: list[StreamRecord], truth: GroundTruthLog, radius: float) -> list[ErrorRecord]:
    out = []
    nan = float("nan")
    for r in records:
        ego = (r.ego_x, r.ego_y, r.ego_v, r.ego_theta)
        gxy = local_to_global((r.x_local, r.y_local), ego)
        st = _nearest_opponent(truth, r.t_meas, gxy, radius)
        if st is None:
            continue
        el, et = ego_frame_error(gxy, st, r.ego_theta)
        source = "raw_lidar" if r.sensor is Sensor.LIDAR else "raw_radar"
        out.append(ErrorRecord(r.t_meas, -1, el, et, nan, nan, source))
    return out


def drive_engine(engine: TrackingEngine, records: list[StreamRecord], duration: float,
                 truth: GroundTruthLog | None = None, radius: float = 10.0):
    """Feed delivery-ordered records at the engine rate and score each output.

    Returns the tracked error records and the per-cycle compute times.
    """
    cfg = engine.config
    R = {Sensor.LIDAR: cfg.R_lidar(), Sensor.RADAR: cfg.R_radar()}
    pending = sorted(records, key=lambda r: (r.t_delivery, r.t_meas))
    out: list[ErrorRecord] = []
    times: list[float] = []
    n_cycles = int(math.floor(duration * cfg.engine_rate + 1e-9))
    i = 0
    for k in range(1, n_cycles + 1):
        t_curr = k / cfg.engine_rate
        while i < len(pending) and pending[i].t_delivery <= t_curr:
            r = pending[i]
            engine.ingest(r.to_measurement(R[r.sensor]))
            i += 1
        tic = time.perf_counter()
        outputs = engine.cycle(t_curr)
        times.append(time.perf_counter() - tic)
        if truth is None:
            continue
        ego = truth.ego_at(t_curr)
        for o in outputs:
            st = _nearest_opponent(truth, t_curr, (o.state.x, o.state.y), radius)
            if st is None:
                continue
            el, et = ego_frame_error((o.state.x, o.state.y), st, ego.theta)
            out.append(ErrorRecord(t_curr, o.track_id, el, et, o.state.v - st[2],
                                   wrap_angle(o.state.theta - st[3]), "tracked"))
    return out, np.array(times)


def _stats(values: np.ndarray) -> dict:
    if len(values) == 0:
        return {"count": 0, "rmse": None, "mean": None, "std": None}
    return {
        "count": int(len(values)),
        "rmse": float(math.sqrt(float(np.mean(np.square(values))))),
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
    }


def summarize(records: list[ErrorRecord], t_min: float = 0.0) -> dict:
    """RMSE, mean and std per channel per source for records at ``t >= t_min``.

    ``e_pos`` is the planar error norm; its "rmse" is the root of the mean
    squared norm.
    """
    out = {}
    for source in SOURCES:
        sel = [r for r in records if r.source == source and r.t >= t_min]
        block = {}
        for ch in CHANNELS:
            vals = np.array([getattr(r, ch) for r in sel], dtype=float)
            block[ch] = _stats(vals[np.isfinite(vals)])
        pos = np.array([math.hypot(r.e_long, r.e_lat) for r in sel], dtype=float)
        block["e_pos"] = _stats(pos)
        out[source] = block
    return out


def compute_timing(times: np.ndarray) -> dict:
    if len(times) == 0:
        return {}
    ms = times * 1e3
    return {
        "cycles": int(len(ms)),
        "mean_ms": float(ms.mean()),
        "p50_ms": float(np.percentile(ms, 50)),
        "p90_ms": float(np.percentile(ms, 90)),
        "p99_ms": float(np.percentile(ms, 99)),
        "max_ms": float(ms.max()),
    }


def run(config: RunConfig) -> ResultBundle:
    """Simulate (or load) a stream, track it and score against ground truth."""
    if config.stream is not None:
        records = read_stream_csv(config.stream)
        truth = read_truth_csv(config.truth)
        scenario = load_scenario(config.scenario)
        duration = float(truth.t[-1])
    else:
        scenario = load_scenario(config.scenario)
        if config.seed is not None:
            scenario.seed = int(config.seed)
        sensors = config.sensors if config.sensors is not None else default_sensors()
        records, truth = simulate(scenario, sensors)
        duration = scenario.duration

    engine = TrackingEngine(config.engine, scenario.track)
    tracked, times = drive_engine(engine, records, duration, truth, config.match_radius)
    errors = raw_errors(records, truth, config.match_radius) + tracked
    errors.sort(key=lambda r: (r.t, SOURCES.index(r.source), r.track_id))

    summary = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "convergence_time": config.convergence_time,
        "delay_compensation": config.engine.delay_compensation,
        "metrics": summarize(errors, config.convergence_time),
        "engine": {**engine.stats.as_dict(), "tracks_created": engine.tracks_created},
        "measurements": len(records),
    }
    bundle = ResultBundle(errors, summary, compute_timing(times))
    if config.output_dir is not None:
        write_bundle(bundle, config.output_dir, config.hist_bins)
    return bundle


# -- outputs --------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_errors_csv(records: list[ErrorRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_HEADER)
        for r in records:
            w.writerow([_fmt(r.t), r.track_id, _fmt(r.e_long), _fmt(r.e_lat),
                        _fmt(r.e_v), _fmt(r.e_theta), r.source])


def read_errors_csv(path) -> list[ErrorRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ERROR_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            f = {k: (float(row[k]) if row[k] != "" else float("nan")) for k in CHANNELS}
            out.append(ErrorRecord(float(row["t"]), int(row["track_id"]), source=row["source"], **f))
    return out


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bundle(bundle: ResultBundle, out_dir, bins: int = 50) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_errors_csv(bundle.records, out / "errors.csv")
    dump_json(bundle.summary, out / "summary.json")
    dump_json(bundle.timing, out / "timing.json")
    if bundle.records:
        bundle.histograms, bundle.ellipses = histogram_export(bundle.records, bins, out)


def histogram_export(records: list[ErrorRecord], bins: int = 50, out_dir=None):
    """Fixed-width histograms per channel and source, plus 1-sigma ellipses.

    Returns ``(histograms, ellipses)``; ``histograms[channel][source]`` holds
    ``edges`` and ``counts``. When ``out_dir`` is given, writes
    ``hist_<channel>.csv`` and ``ellipse.json`` there.
    """
    if not records:
        raise ValueError("no error records to bin")
    hists: dict = {}
    for ch in CHANNELS:
        hists[ch] = {}
        for source in SOURCES:
            vals = np.array([getattr(r, ch) for r in records if r.source == source], dtype=float)
            vals = vals[np.isfinite(vals)]
            if len(vals) == 0:
                continue
            lo, hi = float(vals.min()), float(vals.max())
            if lo == hi:
                lo, hi = lo - 0.5, hi + 0.5
            counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
            hists[ch][source] = {"edges": edges, "counts": counts}

    ellipses = {}
    for source in SOURCES:
        pts = np.array([(r.e_long, r.e_lat) for r in records if r.source == source], dtype=float)
        if len(pts) == 0:
            continue
        mean = pts.mean(axis=0)
        cov = np.cov(pts.T, bias=True) if len(pts) > 1 else np.zeros((2, 2))
        evals, evecs = np.linalg.eigh(cov)
        evals = np.clip(evals, 0.0, None)
        ellipses[source] = {
            "count": int(len(pts)),
            "mean": mean.tolist(),
            "cov": cov.tolist(),
            "semi_axes": np.sqrt(evals[::-1]).tolist(),
            "angle": float(math.atan2(evecs[1, -1], evecs[0, -1])),
        }

    if out_dir is not None:
        out = Path(out_dir)
        for ch, per_source in hists.items():
            with open(out / f"hist_{ch}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["source", "bin_lo", "bin_hi", "count"])
                for source, h in per_source.items():
                    for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
                        w.writerow([source, repr(float(lo)), repr(float(hi)), int(c)])
        dump_json(ellipses, out / "ellipse.json")
    return hists, ellipses


def load_summary(path_or_dir) -> dict:
    p = Path(path_or_dir)
    if p.is_dir():
        p = p / "summary.json"
    with open(p) as fh:
        return json.load(fh)


def compare(summary_a: dict, summary_b: dict) -> dict:
    """Per-channel RMSE deltas (b - a) and ratios (b / a)."""
    ma, mb = summary_a["metrics"], summary_b["metrics"]
    report = {"a": summary_a.get("scenario"), "b": summary_b.get("scenario"), "channels": {}}
    for source in sorted(set(ma) | set(mb)):
        if source not in ma or source not in mb:
            raise KeyError(f"source {source!r} missing from one bundle")
        for ch in sorted(set(ma[source]) | set(mb[source])):
            if ch not in ma[source] or ch not in mb[source]:
                raise KeyError(f"channel {source}.{ch} missing from one bundle")
            a = ma[source][ch]["rmse"]
            b = mb[source][ch]["rmse"]
            delta = None if a is None or b is None else b - a
            ratio = None if a is None or b is None or a == 0 else b / a
            report["channels"][f"{source}.{ch}"] = {"rmse_a": a, "rmse_b": b, "delta": delta, "ratio": ratio}
    return report


def format_compare(report: dict) -> str:
    def f(v):
        return "-" if v is None else f"{v:.4f}"

    rows = [("channel", "rmse_a", "rmse_b", "delta", "ratio")]
    for name, c in report["channels"].items():
        rows.append((name, f(c["rmse_a"]), f(c["rmse_b"]), f(c["delta"]), f(c["ratio"])))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                       for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines)
