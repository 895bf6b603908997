"""Per-track extended Kalman filter over the CVTR model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from racemtt import measurement as mm
from racemtt.motion import EPS_OMEGA, jacobian, step, wrap_angle

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
MIN_INIT_DT = 1e-3


class CorrectionRejected(RuntimeError):
    """Innovation covariance too ill-conditioned to invert."""


@dataclass(frozen=True, eq=False)
class FilterState:
    X: np.ndarray
    P: np.ndarray
    t: float

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        P = np.array(self.P, dtype=float)
        if X.shape != (4,) or P.shape != (4, 4):
            raise ValueError("FilterState needs X of shape (4,) and P of shape (4, 4)")
        X.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "t", float(self.t))


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _q_matrix(q_rate) -> np.ndarray:
    q = np.asarray(q_rate, dtype=float)
    return np.diag(q) if q.ndim == 1 else q


def predict(fs: FilterState, omega: float, T: float, q_rate, eps_omega: float = EPS_OMEGA) -> FilterState:
    """Time update: ``P <- A P A^T + Q_rate * T``."""
    if not T > 0.0:
        raise ValueError(f"prediction step must be positive, got {T}")
    X = step(fs.X, omega, T, eps_omega)
    A = jacobian(fs.X, omega, T, eps_omega)
    P = _symmetrize(A @ fs.P @ A.T + _q_matrix(q_rate) * T)
    return FilterState(X, P, fs.t + T)


def output_model(X, m: mm.Measurement) -> tuple[np.ndarray, np.ndarray]:
    """Predicted observation and its Jacobian for the sensor of ``m``."""
    if m.sensor is mm.Sensor.RADAR:
        return mm.radar_output(X, m.ego), mm.radar_matrix(X, m.ego)
    return mm.lidar_output(X), mm.lidar_matrix()


def innovation_covariance(fs: FilterState, m: mm.Measurement) -> np.ndarray:
    _, H = output_model(fs.X, m)
    return H @ fs.P @ H.T + m.R_global()


def correct(fs: FilterState, m: mm.Measurement, time_tol: float = 1e-9) -> FilterState:
    """Measurement update with the standard covariance form.

    Raises
    ------
    CorrectionRejected
        When the innovation covariance condition number exceeds 1e12.
    """
    if abs(fs.t - m.t_meas) > time_tol:
        raise ValueError(f"filter time {fs.t} does not match measurement time {m.t_meas}")
    y_hat, H = output_model(fs.X, m)
    S = H @ fs.P @ H.T + m.R_global()
    if np.linalg.cond(S) > MAX_CONDITION:
        raise CorrectionRejected(f"innovation covariance ill-conditioned at t={m.t_meas}")
    E = m.vector() - y_hat
    # L = P H^T S^-1, via a solve on the symmetric S
    L = np.linalg.solve(S, H @ fs.P).T
    X = fs.X + L @ E
    X[3] = wrap_angle(X[3])
    P = _symmetrize((np.eye(4) - L @ H) @ fs.P)
    return FilterState(X, P, fs.t)


def joseph_update(P, H, R, L) -> np.ndarray:
    """Joseph-form covariance update, kept as a cross-check."""
    I_LH = np.eye(P.shape[0]) - L @ H
    return I_LH @ P @ I_LH.T + L @ R @ L.T


def initial_covariance(pos_var: float, v_std: float = 20.0, theta_std: float = 0.5) -> np.ndarray:
    return np.diag([pos_var, pos_var, v_std ** 2, theta_std ** 2])


def init_two_step(p1, t1: float, p2, t2: float, P0, P_fallback=None) -> FilterState:
    """Seed speed and heading from two globalized positions.

    The speed is the displacement divided by the elapsed time. When the
    two timestamps are closer than 1 ms the track restarts at ``p2`` with
    zero speed and heading and the fallback covariance.
    """
    x1, y1 = float(p1[0]), float(p1[1])
    x2, y2 = float(p2[0]), float(p2[1])
    if not all(math.isfinite(c) for c in (x1, y1, x2, y2)):
        raise ValueError("initialization positions must be finite")
    dt = t2 - t1
    if dt < MIN_INIT_DT:
        log.debug("two-step init with dt=%.3g s, falling back to zero motion", dt)
        P = P0 if P_fallback is None else P_fallback
        return FilterState([x2, y2, 0.0, 0.0], P, t2)
    dx, dy = x2 - x1, y2 - y1
    v = math.hypot(dx, dy) / dt
    theta = math.atan2(dy, dx) if (dx or dy) else 0.0
    return FilterState([x2, y2, v, wrap_angle(theta)], P0, t2)


def init_from_measurements(m1: mm.Measurement, m2: mm.Measurement, P0, P_fallback=None) -> FilterState:
    return init_two_step(mm.to_global(m1), m1.t_meas, mm.to_global(m2), m2.t_meas, P0, P_fallback)
