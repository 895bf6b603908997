"""Constant velocity and turn rate (CVTR) process model.

State layout is ``[x, y, v, theta]``: global position (m), signed speed
(m/s) and heading (rad). The yaw rate enters as an exogenous input, so it
is not part of the state.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

EPS_OMEGA = 1e-6


class TargetState(NamedTuple):
    x: float
    y: float
    v: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def _check(state, T: float) -> None:
    if not (math.isfinite(T) and T > 0.0):
        raise ValueError(f"time step must be finite and positive, got {T}")
    if not all(math.isfinite(c) for c in state):
        raise ValueError("state contains non-finite values")


def step(state, omega: float, T: float, eps_omega: float = EPS_OMEGA) -> np.ndarray:
    """Propagate ``state`` by ``T`` seconds along a circular arc.

    Exact for constant speed and yaw rate, whatever the step length.
    Below ``eps_omega`` the straight-line limit is used.
    """
    x, y, v, th = (float(c) for c in state)
    _check((x, y, v, th, omega), T)
    if abs(omega) > eps_omega:
        half = 0.5 * omega * T
        chord = 2.0 * v / omega * math.sin(half)
        x_new = x + chord * math.cos(th + half)
        y_new = y + chord * math.sin(th + half)
    else:
        # small-angle limit of the arc: chord vT along the mid-step heading,
        # which equals the textbook straight line at omega = 0 and keeps
        # step composition exact for tiny nonzero omega
        mid = th + 0.5 * omega * T
        x_new = x + v * T * math.cos(mid)
        y_new = y + v * T * math.sin(mid)
    return np.array([x_new, y_new, v, wrap_angle(th + omega * T)])


def jacobian(state, omega: float, T: float, eps_omega: float = EPS_OMEGA) -> np.ndarray:
    """Closed-form ``d step / d state`` with the yaw rate held fixed."""
    x, y, v, th = (float(c) for c in state)
    _check((x, y, v, th, omega), T)
    A = np.eye(4)
    if abs(omega) > eps_omega:
        half = 0.5 * omega * T
        k = 2.0 / omega * math.sin(half)
        c, s = math.cos(th + half), math.sin(th + half)
        A[0, 2] = k * c
        A[0, 3] = -v * k * s
        A[1, 2] = k * s
        A[1, 3] = v * k * c
    else:
        c, s = math.cos(th + 0.5 * omega * T), math.sin(th + 0.5 * omega * T)
        A[0, 2] = T * c
        A[0, 3] = -v * T * s
        A[1, 2] = T * s
        A[1, 3] = v * T * c
    return A


def process_noise(q_rate, T: float) -> np.ndarray:
    """Per-step process noise, linear in the step duration.

    ``q_rate`` is either a length-4 diagonal or a full 4x4 rate matrix.
    """
    if not (math.isfinite(T) and T > 0.0):
        raise ValueError(f"time step must be finite and positive, got {T}")
    q = np.asarray(q_rate, dtype=float)
    if q.ndim == 1:
        q = np.diag(q)
    if q.shape != (4, 4):
        raise ValueError("q_rate must be a 4-vector or 4x4 matrix")
    if not np.allclose(q, q.T, atol=1e-12, rtol=0.0):
        raise ValueError("q_rate must be symmetric")
    if np.linalg.eigvalsh(q).min() < -1e-12:
        raise ValueError("q_rate must be positive semidefinite")
    return q * T
