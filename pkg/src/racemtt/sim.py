"""Deterministic ego/opponent racetrack scenarios with noisy, delayed sensors.

Vehicles move along the reference trajectory with a scripted speed
profile and lateral offset. Sensors sample the true relative geometry at
their own rate, add seeded Gaussian noise in the ego frame and are
delivered after a jittered delay, so delivery order can differ from
timestamp order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from os import PathLike
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from racemtt.geometry import ReferenceTrajectory, build_from_centerline, load_centerline_csv
from racemtt.measurement import EgoState, Measurement, Sensor

SIM_RATE = 1000.0

STREAM_HEADER = ["t_meas", "t_delivery", "sensor", "x_local", "y_local", "range_rate",
                 "ego_x", "ego_y", "ego_v", "ego_theta"]
TRUTH_HEADER = ["t", "ego_x", "ego_y", "ego_v", "ego_theta",
                "opp_x", "opp_y", "opp_v", "opp_theta", "opp_omega"]


class ScenarioError(ValueError):
    pass


# -- profiles -------------------------------------------------------------

@dataclass
class SpeedProfile:
    """``v(t) = mean + amplitude * sin(2 pi t / period + phase)``."""

    mean: float
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0

    def speed(self, t):
        w = 2.0 * math.pi / self.period
        return self.mean + self.amplitude * np.sin(w * np.asarray(t) + self.phase)

    def distance(self, t):
        """Arc length travelled since ``t = 0`` (negative for ``t < 0``)."""
        t = np.asarray(t, dtype=float)
        w = 2.0 * math.pi / self.period
        return self.mean * t - self.amplitude / w * (np.cos(w * t + self.phase) - math.cos(self.phase))


@dataclass
class LateralManeuver:
    """Smooth (raised-cosine) lateral shift between two offsets."""

    t_start: float
    t_end: float
    offset_from: float
    offset_to: float


@dataclass
class VehicleProfile:
    start_s: float
    speed: SpeedProfile
    lateral: list[LateralManeuver] = field(default_factory=list)
    time_shift: float = 0.0

    def arc_length(self, t):
        return self.start_s + self.speed.distance(np.asarray(t) - self.time_shift)

    def offset(self, t):
        """Lateral offset (left positive) and its time derivative."""
        t = np.asarray(t, dtype=float)
        d = np.zeros_like(t)
        dd = np.zeros_like(t)
        for man in sorted(self.lateral, key=lambda m: m.t_start):
            span = man.t_end - man.t_start
            u = np.clip((t - man.t_start) / span, 0.0, 1.0)
            blend = 0.5 - 0.5 * np.cos(math.pi * u)
            active = (t >= man.t_start)
            d = np.where(active, man.offset_from + (man.offset_to - man.offset_from) * blend, d)
            inside = (t > man.t_start) & (t < man.t_end)
            rate = (man.offset_to - man.offset_from) * 0.5 * math.pi / span * np.sin(math.pi * u)
            dd = np.where(inside, rate, np.where(active, 0.0, dd))
        return d, dd

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleProfile":
        return cls(
            start_s=float(data["start_s"]),
            speed=SpeedProfile(**data["speed"]),
            lateral=[LateralManeuver(**m) for m in data.get("lateral", [])],
            time_shift=float(data.get("time_shift", 0.0)),
        )


@dataclass
class SensorSpec:
    kind: Sensor
    rate: float
    delay_mean: float
    delay_jitter_std: float
    noise_std: tuple[float, ...]
    fov_half_angle: float = math.pi
    max_range: float = 200.0
    phase: float = 0.0
    bias: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.kind = Sensor(self.kind)
        self.noise_std = tuple(float(s) for s in self.noise_std)
        need = 3 if self.kind is Sensor.RADAR else 2
        if len(self.noise_std) != need:
            raise ScenarioError(f"{self.kind.value} needs {need} noise standard deviations")
        if self.rate <= 0 or self.delay_mean < 0 or min(self.noise_std) < 0 or self.delay_jitter_std < 0:
            raise ScenarioError(f"invalid {self.kind.value} sensor spec")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SensorSpec":
        return cls(**data)


def default_sensors(noise: bool = True, delay: bool = True) -> list[SensorSpec]:
    k = 1.0 if noise else 0.0
    d = 1.0 if delay else 0.0
    return [
        SensorSpec(Sensor.LIDAR, 20.0, 0.080 * d, 0.010 * d, (0.15 * k, 0.15 * k),
                   fov_half_angle=math.pi, max_range=200.0, phase=0.011),
        SensorSpec(Sensor.RADAR, 15.0, 0.040 * d, 0.010 * d, (0.5 * k, 0.5 * k, 0.3 * k),
                   fov_half_angle=math.radians(60.0), max_range=150.0, phase=0.027),
    ]


# -- track paths ----------------------------------------------------------

class TrackPath:
    """Smooth arc-length parameterization of a reference trajectory."""

    def __init__(self, traj: ReferenceTrajectory):
        self.traj = traj
        pts = np.array(traj.points)
        if traj.closed:
            pts[-1] = pts[0]
        bc = "periodic" if traj.closed else "not-a-knot"
        self.spline = CubicSpline(traj.arc_length, pts, bc_type=bc)
        self.length = traj.length

    def _wrap(self, s):
        s = np.asarray(s, dtype=float)
        if self.traj.closed:
            return np.mod(s, self.length)
        if (s < 0).any() or (s > self.length).any():
            raise ScenarioError("vehicle profile leaves the open track's arc-length domain")
        return s

    def pose(self, profile: VehicleProfile, t):
        """Position, speed and heading of a vehicle at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = self._wrap(profile.arc_length(t))
        s_dot = profile.speed.speed(t - profile.time_shift)
        d, d_dot = profile.offset(t)
        c = self.spline(s)
        c1 = self.spline(s, 1)
        c2 = self.spline(s, 2)
        g = np.hypot(c1[:, 0], c1[:, 1])
        tan = c1 / g[:, None]
        nrm = np.column_stack([-tan[:, 1], tan[:, 0]])
        # derivative of the unit tangent w.r.t. the spline parameter
        dtan = (c2 - tan * np.sum(tan * c2, axis=1)[:, None]) / g[:, None]
        dnrm = np.column_stack([-dtan[:, 1], dtan[:, 0]])
        pos = c + d[:, None] * nrm
        vel = c1 * s_dot[:, None] + d_dot[:, None] * nrm + d[:, None] * dnrm * s_dot[:, None]
        speed = np.hypot(vel[:, 0], vel[:, 1])
        heading = np.arctan2(vel[:, 1], vel[:, 0])
        return pos, speed, heading


# -- scenarios ------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    track: ReferenceTrajectory
    ego_profile: VehicleProfile
    opponent_profiles: list[VehicleProfile]
    duration: float
    seed: int = 0
    track_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        if not self.opponent_profiles:
            raise ScenarioError("scenario needs at least one opponent")

    @cached_property
    def path(self) -> TrackPath:
        return TrackPath(self.track)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "track": self.track_spec,
            "ego_profile": asdict(self.ego_profile),
            "opponent_profiles": [asdict(p) for p in self.opponent_profiles],
            "duration": self.duration,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | PathLike | None = None) -> "Scenario":
        spec = data["track"]
        if "builtin" in spec:
            track = builtin_track(spec["builtin"])
        elif "csv" in spec:
            p = Path(spec["csv"])
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            track = load_centerline_csv(p, closed=bool(spec.get("closed", True)))
        else:
            raise ScenarioError("track must name a builtin or a csv centerline")
        opps = data.get("opponent_profiles")
        if opps is None and "opponent_profile" in data:
            opps = [data["opponent_profile"]]
        return cls(
            name=data.get("name", "scenario"),
            track=track,
            ego_profile=VehicleProfile.from_dict(data["ego_profile"]),
            opponent_profiles=[VehicleProfile.from_dict(o) for o in opps or []],
            duration=float(data["duration"]),
            seed=int(data.get("seed", 0)),
            track_spec=dict(spec),
        )

    @classmethod
    def from_json(cls, path: str | PathLike) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=Path(path).parent)

    def save_json(self, path: str | PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _arc_resample(curve: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.hypot(*np.diff(curve, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(3, int(round(s[-1] / spacing)))
    su = np.linspace(0.0, s[-1], n + 1)
    return np.column_stack([np.interp(su, s, curve[:, 0]), np.interp(su, s, curve[:, 1])])


def _oval_centerline():
    phi = np.linspace(0.0, 2.0 * math.pi, 200_001)
    curve = np.column_stack([600.0 * np.cos(phi), 350.0 * np.sin(phi)])
    return _arc_resample(curve, 1.0)


def _roadcourse_centerline():
    phi = np.linspace(0.0, 2.0 * math.pi, 200_001)
    r = 520.0 + 130.0 * np.cos(2.0 * phi) + 45.0 * np.sin(3.0 * phi + 0.5)
    curve = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    return _arc_resample(curve, 1.0)


_TRACKS = {"oval": _oval_centerline, "roadcourse": _roadcourse_centerline}
_TRACK_CACHE: dict[str, ReferenceTrajectory] = {}


def builtin_track(name: str) -> ReferenceTrajectory:
    if name not in _TRACKS:
        raise ScenarioError(f"unknown builtin track {name!r}; choose from {sorted(_TRACKS)}")
    if name not in _TRACK_CACHE:
        _TRACK_CACHE[name] = build_from_centerline(_TRACKS[name](), closed=True)
    return _TRACK_CACHE[name]


def builtin_scenarios() -> dict[str, Scenario]:
    """Named scenarios: a constant-speed oval pass and a variable-speed chase."""
    oval = builtin_track("oval")
    road = builtin_track("roadcourse")
    pass_left = [LateralManeuver(1.0, 3.0, 0.0, 4.0), LateralManeuver(9.0, 11.0, 4.0, 0.0)]
    scenarios = {
        "oval-overtake": Scenario(
            "oval-overtake", oval,
            ego_profile=VehicleProfile(0.0, SpeedProfile(70.0), pass_left),
            opponent_profiles=[VehicleProfile(40.0, SpeedProfile(60.0))],
            duration=15.0, seed=7, track_spec={"builtin": "oval"},
        ),
        "roadcourse-chase": Scenario(
            "roadcourse-chase", road,
            ego_profile=VehicleProfile(
                100.0, SpeedProfile(57.5, 27.75, 14.0),
                [LateralManeuver(4.0, 6.0, 0.0, 2.0), LateralManeuver(12.0, 14.0, 2.0, -2.0),
                 LateralManeuver(20.0, 22.0, -2.0, 0.0)],
                time_shift=0.5,
            ),
            opponent_profiles=[VehicleProfile(100.0, SpeedProfile(57.5, 27.75, 14.0))],
            duration=30.0, seed=11, track_spec={"builtin": "roadcourse"},
        ),
        "oval-pair": Scenario(
            "oval-pair", oval,
            ego_profile=VehicleProfile(0.0, SpeedProfile(70.0), pass_left),
            opponent_profiles=[
                VehicleProfile(40.0, SpeedProfile(60.0)),
                VehicleProfile(70.0, SpeedProfile(62.0), [LateralManeuver(0.0, 0.5, -4.0, -4.0)]),
            ],
            duration=15.0, seed=13, track_spec={"builtin": "oval"},
        ),
    }
    return scenarios


# -- simulation -----------------------------------------------------------

@dataclass
class GroundTruthLog:
    t: np.ndarray
    ego: np.ndarray            # (N, 4): x, y, v, theta
    opponents: np.ndarray      # (K, N, 5): x, y, v, theta, omega

    def ego_at(self, t: float) -> EgoState:
        return EgoState(*(_interp_state(self.t, self.ego, t)))

    def opponent_at(self, k: int, t: float) -> np.ndarray:
        return _interp_state(self.t, self.opponents[k], t)


def _interp_state(ts, table, t):
    i = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
    w = (t - ts[i]) / (ts[i + 1] - ts[i])
    a, b = table[i], table[i + 1]
    out = a + w * (b - a)
    # heading is in column 3 for every table
    dth = math.remainder(b[3] - a[3], 2.0 * math.pi)
    out[3] = math.remainder(a[3] + w * dth, 2.0 * math.pi)
    return out


@dataclass(frozen=True)
class StreamRecord:
    """One emitted detection as it appears on the wire."""

    t_meas: float
    t_delivery: float
    sensor: Sensor
    x_local: float
    y_local: float
    range_rate: float | None
    ego_x: float
    ego_y: float
    ego_v: float
    ego_theta: float
    target: int = field(default=-1, compare=False)

    def to_measurement(self, R) -> Measurement:
        return Measurement(
            self.sensor, self.t_meas, (self.x_local, self.y_local), R,
            EgoState(self.ego_x, self.ego_y, self.ego_v, self.ego_theta),
            self.range_rate, t_delivery=self.t_delivery,
        )


def simulate(scenario: Scenario, sensors: list[SensorSpec] | None = None):
    """Generate the delivery-ordered measurement stream and the truth log."""
    sensors = default_sensors() if sensors is None else sensors
    path = scenario.path
    n = int(round(scenario.duration * SIM_RATE))
    t = np.arange(n + 1) / SIM_RATE

    def states(profile, times):
        pos, v, th = path.pose(profile, times)
        return np.column_stack([pos, v, th])

    ego = states(scenario.ego_profile, t)
    opps = []
    for prof in scenario.opponent_profiles:
        st = states(prof, t)
        omega = np.gradient(np.unwrap(st[:, 3]), t)
        opps.append(np.column_stack([st, omega]))
    truth = GroundTruthLog(t, ego, np.stack(opps))

    seeds = np.random.SeedSequence(scenario.seed).spawn(len(sensors))
    records: list[StreamRecord] = []
    for spec, ss in zip(sensors, seeds):
        rng = np.random.default_rng(ss)
        k0 = math.floor(-spec.phase * spec.rate) + 1
        times = (np.arange(k0, int(scenario.duration * spec.rate) + 2) / spec.rate) + spec.phase
        times = times[(times > 0.0) & (times <= scenario.duration)]
        ego_s = states(scenario.ego_profile, times)
        for k, prof in enumerate(scenario.opponent_profiles):
            opp_s = states(prof, times)
            noise = rng.standard_normal((len(times), len(spec.noise_std))) * np.array(spec.noise_std)
            jitter = rng.standard_normal(len(times)) * spec.delay_jitter_std
            for i, tm in enumerate(times):
                ex, ey, ev, eth = ego_s[i]
                ox, oy, ov, oth = opp_s[i]
                dx, dy = ox - ex, oy - ey
                c, s = math.cos(eth), math.sin(eth)
                lx, ly = c * dx + s * dy, -s * dx + c * dy
                rng_ = math.hypot(lx, ly)
                if rng_ > spec.max_range or abs(math.atan2(ly, lx)) > spec.fov_half_angle or rng_ <= 0.1:
                    continue
                rr = None
                if spec.kind is Sensor.RADAR:
                    rvx = ov * math.cos(oth) - ev * c
                    rvy = ov * math.sin(oth) - ev * s
                    rr = (rvx * dx + rvy * dy) / rng_ + noise[i, 2]
                delay = max(0.0, spec.delay_mean + jitter[i])
                records.append(StreamRecord(
                    float(tm), float(tm + delay), spec.kind,
                    float(lx + spec.bias[0] + noise[i, 0]), float(ly + spec.bias[1] + noise[i, 1]),
                    None if rr is None else float(rr),
                    float(ex), float(ey), float(ev), float(eth), target=k,
                ))
    records.sort(key=lambda r: (r.t_delivery, r.t_meas, r.sensor.value, r.target))
    return records, truth


# -- file formats ---------------------------------------------------------

def write_stream_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STREAM_HEADER)
        for r in records:
            num = [repr(float(v)) for v in (r.t_meas, r.t_delivery)]
            w.writerow(num + [r.sensor.value] + [repr(float(v)) for v in (r.x_local, r.y_local)]
                       + ["" if r.range_rate is None else repr(float(r.range_rate))]
                       + [repr(float(v)) for v in (r.ego_x, r.ego_y, r.ego_v, r.ego_theta)])


def read_stream_csv(path) -> list[StreamRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != STREAM_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out.append(StreamRecord(
                float(row["t_meas"]), float(row["t_delivery"]), Sensor(row["sensor"]),
                float(row["x_local"]), float(row["y_local"]),
                float(row["range_rate"]) if row["range_rate"] != "" else None,
                float(row["ego_x"]), float(row["ego_y"]), float(row["ego_v"]), float(row["ego_theta"]),
            ))
    return out


def write_truth_csv(truth: GroundTruthLog, path) -> None:
    extra = []
    for k in range(1, truth.opponents.shape[0]):
        extra += [f"opp{k + 1}_{c}" for c in ("x", "y", "v", "theta", "omega")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER + extra)
        for i, ti in enumerate(truth.t):
            row = [ti, *truth.ego[i]]
            for k in range(truth.opponents.shape[0]):
                row.extend(truth.opponents[k, i])
            w.writerow([repr(float(v)) for v in row])


def read_truth_csv(path) -> GroundTruthLog:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:len(TRUTH_HEADER)] != TRUTH_HEADER:
        raise ValueError(f"{path}: unexpected header")
    k = (data.shape[1] - 5) // 5
    opps = np.stack([data[:, 5 + 5 * j: 10 + 5 * j] for j in range(k)])
    return GroundTruthLog(data[:, 0], data[:, 1:5], opps)
