"""Track lifecycle: a four-state machine driven by M/N association counts.

::

    Tentative --hits>=TH_acc--> Accepted --hits>=TH_conf--> Confirmed
        |                          |                           |
        +--age>=M---------------> Terminated <--full window, hits<TH_elim
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from racemtt.ekf import FilterState


class FsmState(str, enum.Enum):
    TENTATIVE = "tentative"
    ACCEPTED = "accepted"
    CONFIRMED = "confirmed"
    TERMINATED = "terminated"


ALLOWED_TRANSITIONS = {
    FsmState.TENTATIVE: {FsmState.ACCEPTED, FsmState.TERMINATED},
    FsmState.ACCEPTED: {FsmState.CONFIRMED, FsmState.TERMINATED},
    FsmState.CONFIRMED: {FsmState.TERMINATED},
    FsmState.TERMINATED: set(),
}


@dataclass(frozen=True)
class FsmConfig:
    M: int = 10
    th_acc: int = 3
    th_conf: int = 6
    th_elim: int = 2

    def __post_init__(self):
        if not (0 <= self.th_elim < self.th_acc < self.th_conf <= self.M):
            raise ValueError(
                "FSM thresholds must satisfy TH_elim < TH_acc < TH_conf <= M, got "
                f"TH_elim={self.th_elim}, TH_acc={self.th_acc}, TH_conf={self.th_conf}, M={self.M}"
            )


@dataclass(frozen=True)
class PendingInit:
    """First associated position of a track still awaiting two-step init."""

    position: tuple[float, float]
    t: float


@dataclass(frozen=True, eq=False)
class Track:
    id: int
    filter: FilterState
    fsm: FsmState = FsmState.TENTATIVE
    history: tuple[bool, ...] = ()
    age_cycles: int = 0
    pending: PendingInit | None = None
    n_associations: int = 0
    last_range_rate: float | None = field(default=None, compare=False)

    @property
    def hits(self) -> int:
        return sum(self.history)

    @property
    def initialized(self) -> bool:
        return self.pending is None


class TerminatedTrackError(RuntimeError):
    pass


def record_cycle(track: Track, associated: bool, M: int) -> Track:
    """Push one cycle's association flag into the last-M window."""
    if track.fsm is FsmState.TERMINATED:
        raise TerminatedTrackError(f"track {track.id} is terminated")
    history = (track.history + (bool(associated),))[-M:]
    return replace(track, history=history, age_cycles=track.age_cycles + 1)


def transition(track: Track, cfg: FsmConfig) -> Track:
    hits = track.hits
    full = len(track.history) >= cfg.M
    state = track.fsm
    if state is FsmState.TENTATIVE:
        if hits >= cfg.th_acc:
            state = FsmState.ACCEPTED
        elif track.age_cycles >= cfg.M:
            state = FsmState.TERMINATED
    elif state in (FsmState.ACCEPTED, FsmState.CONFIRMED):
        if full and hits < cfg.th_elim:
            state = FsmState.TERMINATED
        elif state is FsmState.ACCEPTED and hits >= cfg.th_conf:
            state = FsmState.CONFIRMED
    if state is track.fsm:
        return track
    assert state in ALLOWED_TRANSITIONS[track.fsm]
    return replace(track, fsm=state)


def spawn(position, t: float, track_id: int, P_spawn) -> Track:
    """New tentative track at rest, pending two-step initialization."""
    x, y = float(position[0]), float(position[1])
    fs = FilterState(np.array([x, y, 0.0, 0.0]), P_spawn, t)
    return Track(id=track_id, filter=fs, pending=PendingInit((x, y), float(t)))
