"""Latency-aware multi-target tracking engine.

Measurements are buffered by their physical timestamp and processed in
time order, one MTT cycle per (timestamp, sensor) group: predict every
track to the measurement time, associate, update track lifecycles,
correct, spawn. After every cycle the full engine state is pushed to a
bounded history so that a late (out-of-sequence) measurement can roll the
engine back and replay everything newer in the right order.

Output is predicted from the engine time to the caller's current time
without touching the stored filters, which compensates sensor delay.
"""

from __future__ import annotations

import bisect
import logging
import math
import threading
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

from racemtt import ekf
from racemtt.association import build_cost_matrix, solve_assignment
from racemtt.config import EngineConfig
from racemtt.geometry import ReferenceTrajectory, yaw_rate_input
from racemtt.measurement import Measurement, Sensor, to_global
from racemtt.motion import TargetState
from racemtt.tracks import FsmState, Track, record_cycle, spawn, transition

log = logging.getLogger(__name__)


class TrackOutput(NamedTuple):
    track_id: int
    state: TargetState
    P: np.ndarray
    t: float


@dataclass(frozen=True, eq=False)
class EngineSnapshot:
    """Post-update engine state plus the measurements that produced it.

    ``measurements`` is empty for measurement-less cycles.
    """

    t: float
    t_mtt: float | None
    tracks: tuple[Track, ...]
    measurements: tuple[Measurement, ...]
    next_id: int


@dataclass
class EngineStats:
    cycles: int = 0
    processed: int = 0
    oosm: int = 0
    reprocessed: int = 0
    replayed: int = 0
    dropped_oosm: int = 0
    rejected_corrections: int = 0
    spawned: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class MeasurementBuffer:
    """Ordered map from timestamp to measurements in arrival order."""

    def __init__(self):
        self._keys: list[float] = []
        self._items: dict[float, list[Measurement]] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._items.values())

    def __bool__(self) -> bool:
        return bool(self._keys)

    def __iter__(self):
        for k in self._keys:
            yield from self._items[k]

    def insert(self, m: Measurement) -> None:
        self._bucket(m.t_meas).append(m)

    def insert_front(self, ms: Iterable[Measurement]) -> None:
        """Insert ahead of same-timestamp entries, keeping ``ms`` order."""
        grouped: dict[float, list[Measurement]] = {}
        for m in ms:
            grouped.setdefault(m.t_meas, []).append(m)
        for t, group in grouped.items():
            bucket = self._bucket(t)
            bucket[:0] = group

    def _bucket(self, t: float) -> list[Measurement]:
        if t not in self._items:
            bisect.insort(self._keys, t)
            self._items[t] = []
        return self._items[t]

    def peek_time(self) -> float:
        return self._keys[0]

    def pop_group(self) -> tuple[float, list[Measurement]]:
        """Remove the oldest measurements sharing timestamp and sensor."""
        t = self._keys[0]
        bucket = self._items[t]
        sensor = bucket[0].sensor
        group = [m for m in bucket if m.sensor is sensor]
        rest = [m for m in bucket if m.sensor is not sensor]
        if rest:
            self._items[t] = rest
        else:
            del self._items[t]
            self._keys.pop(0)
        return t, group


def _canonical(m: Measurement):
    # arrival order inside a same-time, same-sensor scan must not matter
    return (m.position_local, m.range_rate if m.range_rate is not None else 0.0)


class TrackingEngine:
    """Single-writer MTT engine.

    ``ingest`` may be called from any thread; ``cycle`` and ``output_at``
    belong to one owner.
    """

    def __init__(self, config: EngineConfig | None = None, trajectory: ReferenceTrajectory | None = None):
        self.config = config or EngineConfig()
        self.trajectory = trajectory
        self._fsm = self.config.fsm
        self._q = np.diag(self.config.q_rate)
        self._intake: list[Measurement] = []
        self._lock = threading.Lock()
        self.buffer = MeasurementBuffer()
        self.tracks: list[Track] = []
        self.t_mtt: float | None = None
        self._next_id = 1
        self._last_t_curr: float | None = None
        self._catchup: float | None = None
        self.stats = EngineStats()
        self.past: list[EngineSnapshot] = [EngineSnapshot(-math.inf, None, (), (), 1)]

    # -- intake ---------------------------------------------------------

    def ingest(self, m: Measurement) -> None:
        if not math.isfinite(m.t_meas):
            raise ValueError("measurement timestamp must be finite")
        with self._lock:
            self._intake.append(m)

    def _drain(self) -> None:
        with self._lock:
            pending, self._intake = self._intake, []
        for m in pending:
            self.buffer.insert(m)

    # -- main cycle -----------------------------------------------------

    def cycle(self, t_curr: float) -> list[TrackOutput]:
        """Process every buffered measurement, then emit output at ``t_curr``."""
        if self._last_t_curr is not None and t_curr < self._last_t_curr:
            raise ValueError(f"t_curr went backwards: {t_curr} < {self._last_t_curr}")
        self._drain()
        processed = False
        while self.buffer:
            t = self.buffer.peek_time()
            if self.t_mtt is not None and (t < self.t_mtt or self._stored_at(t)):
                self.stats.oosm += 1
                t, group = self.buffer.pop_group()
                self._reprocess(t, group)
                continue
            t, group = self.buffer.pop_group()
            self._update(t, sorted(group, key=_canonical))
            processed = True
        if self._catchup is not None:
            if self.t_mtt is not None and self.t_mtt < self._catchup:
                self._advance(self._catchup - self.t_mtt, fsm_cycle=False)
            self._catchup = None
        if not processed and self.t_mtt is not None and self._last_t_curr is not None:
            elapsed = t_curr - self._last_t_curr
            if elapsed > 0:
                self._advance(elapsed, fsm_cycle=True)
        self._last_t_curr = t_curr
        self.stats.cycles += 1
        return self.output_at(t_curr)

    def _omega(self, X) -> float:
        return yaw_rate_input(self.trajectory, X, self.config.omega_max)

    def _predict(self, track: Track, T: float, t_new: float) -> Track:
        fs = ekf.predict(track.filter, self._omega(track.filter.X), T, self._q, self.config.eps_omega)
        return replace(track, filter=ekf.FilterState(fs.X, fs.P, t_new))

    def _predict_all(self, t: float) -> None:
        T = t - self.t_mtt
        if T > 0:
            self.tracks = [self._predict(tr, T, t) for tr in self.tracks]

    def _advance(self, elapsed: float, fsm_cycle: bool) -> None:
        """Measurement-less cycle: prediction only."""
        t = self.t_mtt + elapsed
        self._predict_all(t)
        if fsm_cycle:
            self.tracks = [transition(record_cycle(tr, False, self._fsm.M), self._fsm) for tr in self.tracks]
            self.tracks = [tr for tr in self.tracks if tr.fsm is not FsmState.TERMINATED]
        self.t_mtt = t
        self._push(())

    def _update(self, t: float, group: list[Measurement]) -> None:
        cfg = self.config
        if self.t_mtt is not None:
            self._predict_all(t)

        positions = [to_global(m) for m in group]
        R_pos = [m.R_global()[:2, :2] for m in group]
        predicted = [tr.filter.X[:2] for tr in self.tracks]
        cost, allowed = build_cost_matrix(
            predicted, lambda i, j: self.tracks[i].filter.P[:2, :2] + R_pos[j], positions, cfg.gate
        )
        result = solve_assignment(cost, allowed)
        assigned = dict(result.pairs)

        managed = []
        for i, tr in enumerate(self.tracks):
            tr = transition(record_cycle(tr, i in assigned, self._fsm.M), self._fsm)
            if tr.fsm is not FsmState.TERMINATED and i in assigned:
                tr = self._correct(tr, group[assigned[i]], positions[assigned[i]])
            managed.append(tr)

        for j in result.unassigned_measurements:
            m = group[j]
            tr = spawn(positions[j], t, self._next_id, cfg.P_spawn())
            self._next_id += 1
            self.stats.spawned += 1
            tr = replace(tr, n_associations=1,
                         last_range_rate=m.range_rate if m.sensor is Sensor.RADAR else None)
            managed.append(transition(record_cycle(tr, True, self._fsm.M), self._fsm))

        self.tracks = [tr for tr in managed if tr.fsm is not FsmState.TERMINATED]
        self.t_mtt = t
        self.stats.processed += len(group)
        self._push(tuple(group))

    def _correct(self, tr: Track, m: Measurement, pos) -> Track:
        cfg = self.config
        if tr.pending is not None:
            if m.t_meas - tr.pending.t < cfg.init_min_dt:
                # too close in time for a usable finite difference; wait
                return replace(tr, n_associations=tr.n_associations + 1)
            P0 = ekf.initial_covariance(1.0, cfg.init_v_std, cfg.init_theta_std)
            P0[:2, :2] = m.R_global()[:2, :2]
            fs = ekf.init_two_step(tr.pending.position, tr.pending.t, pos, m.t_meas, P0, cfg.P_spawn())
            return replace(tr, filter=fs, pending=None, n_associations=tr.n_associations + 1)
        try:
            fs = ekf.correct(tr.filter, m)
        except ekf.CorrectionRejected as exc:
            log.warning("track %d: %s", tr.id, exc)
            self.stats.rejected_corrections += 1
            fs = tr.filter
        return replace(tr, filter=fs, n_associations=tr.n_associations + 1)

    # -- history and reprocessing --------------------------------------

    def snapshot(self, measurements: tuple[Measurement, ...] = ()) -> EngineSnapshot:
        t = self.t_mtt if self.t_mtt is not None else -math.inf
        return EngineSnapshot(t, self.t_mtt, tuple(self.tracks), measurements, self._next_id)

    def restore(self, snap: EngineSnapshot) -> None:
        self.tracks = list(snap.tracks)
        self.t_mtt = snap.t_mtt
        self._next_id = snap.next_id

    def _push(self, measurements: tuple[Measurement, ...]) -> None:
        self.past.append(self.snapshot(measurements))
        cutoff = self.t_mtt - self.config.psm_horizon
        # keep the newest snapshot at or before the cutoff as a restore point
        k = 0
        while k + 1 < len(self.past) and self.past[k + 1].t <= cutoff:
            k += 1
        if k:
            del self.past[:k]

    def _stored_at(self, t: float) -> bool:
        # a late arrival sharing the timestamp of an already processed scan
        # must be replayed together with it, not run as a separate cycle
        for snap in reversed(self.past):
            if snap.t < t:
                return False
            if snap.t == t and snap.measurements:
                return True
        return False

    def _reprocess(self, t: float, group: list[Measurement]) -> None:
        pre = self.t_mtt
        idx = None
        if t > pre - self.config.psm_horizon:
            for k in range(len(self.past) - 1, -1, -1):
                if self.past[k].t < t:
                    idx = k
                    break
        if idx is None:
            self.stats.dropped_oosm += len(group)
            log.warning("dropping %d measurement(s) at t=%.4f: older than the %.3f s history",
                        len(group), t, self.config.psm_horizon)
            return
        replay = [m for snap in self.past[idx + 1:] for m in snap.measurements]
        del self.past[idx + 1:]
        self.restore(self.past[idx])
        self.buffer.insert_front(group)
        self.buffer.insert_front(replay)
        self.stats.reprocessed += 1
        self.stats.replayed += len(replay)
        self._catchup = pre if self._catchup is None else max(self._catchup, pre)

    # -- output ---------------------------------------------------------

    def output_at(self, t_curr: float) -> list[TrackOutput]:
        """Confirmed tracks predicted to ``t_curr``; stored filters untouched."""
        out = []
        for tr in self.tracks:
            if tr.fsm is not FsmState.CONFIRMED:
                continue
            fs = tr.filter
            T_out = t_curr - self.t_mtt
            if self.config.delay_compensation and T_out > 0:
                fs = ekf.predict(fs, self._omega(fs.X), T_out, self._q, self.config.eps_omega)
            out.append(TrackOutput(tr.id, TargetState(*map(float, fs.X)), fs.P.copy(), float(t_curr)))
        return out

    @property
    def tracks_created(self) -> int:
        return self._next_id - 1

    def confirmed(self) -> list[Track]:
        return [tr for tr in self.tracks if tr.fsm is FsmState.CONFIRMED]
