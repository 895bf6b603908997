"""LiDAR and RADAR observation models.

Positions arrive in the ego frame (x forward, y left) and are moved to
the global frame with the ego pose recorded at the measurement instant.
RADAR additionally reports range rate, the radial component of the
target-minus-ego velocity, negative while closing.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from racemtt.motion import wrap_angle

MIN_RANGE = 0.1


class Sensor(str, enum.Enum):
    LIDAR = "lidar"
    RADAR = "radar"


class EgoState(NamedTuple):
    x: float
    y: float
    v: float
    theta: float


class DegenerateGeometryError(ValueError):
    """Target too close to the ego reference point for a bearing."""


@dataclass(frozen=True, eq=False)
class Measurement:
    """A single detection.

    ``R`` is expressed in the ego frame: 2x2 for LiDAR, 3x3 for RADAR
    (position block then range rate).
    """

    sensor: Sensor
    t_meas: float
    position_local: tuple[float, float]
    R: np.ndarray
    ego: EgoState
    range_rate: float | None = None
    t_delivery: float | None = field(default=None, compare=False)

    def __post_init__(self):
        sensor = Sensor(self.sensor)
        object.__setattr__(self, "sensor", sensor)
        if not (math.isfinite(self.t_meas) and self.t_meas > 0.0):
            raise ValueError(f"t_meas must be finite and positive, got {self.t_meas}")
        if (self.range_rate is not None) != (sensor is Sensor.RADAR):
            raise ValueError("range_rate must be present exactly for RADAR measurements")
        R = np.array(self.R, dtype=float)
        dim = 3 if sensor is Sensor.RADAR else 2
        if R.shape != (dim, dim):
            raise ValueError(f"{sensor.value} R must be {dim}x{dim}")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be symmetric positive definite")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "position_local", (float(self.position_local[0]),
                                                     float(self.position_local[1])))
        object.__setattr__(self, "ego", EgoState(*map(float, self.ego)))

    @property
    def dim(self) -> int:
        return 3 if self.sensor is Sensor.RADAR else 2

    def vector(self) -> np.ndarray:
        """Observation in global coordinates: ``[x, y]`` or ``[x, y, range_rate]``."""
        gx, gy = to_global(self)
        if self.sensor is Sensor.RADAR:
            return np.array([gx, gy, self.range_rate])
        return np.array([gx, gy])

    def R_global(self) -> np.ndarray:
        """Noise covariance with the position block rotated to the global frame."""
        c, s = math.cos(self.ego.theta), math.sin(self.ego.theta)
        rot = np.eye(self.dim)
        rot[:2, :2] = [[c, -s], [s, c]]
        return rot @ self.R @ rot.T


def local_to_global(p_local, ego) -> tuple[float, float]:
    c, s = math.cos(ego[3]), math.sin(ego[3])
    lx, ly = p_local
    return ego[0] + c * lx - s * ly, ego[1] + s * lx + c * ly


def global_to_local(p_global, ego) -> tuple[float, float]:
    c, s = math.cos(ego[3]), math.sin(ego[3])
    dx, dy = p_global[0] - ego[0], p_global[1] - ego[1]
    return c * dx + s * dy, -s * dx + c * dy


def to_global(m: Measurement) -> tuple[float, float]:
    return local_to_global(m.position_local, m.ego)


H_LIDAR = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
H_LIDAR.setflags(write=False)


def lidar_output(state) -> np.ndarray:
    return np.array([float(state[0]), float(state[1])])


def lidar_matrix() -> np.ndarray:
    return H_LIDAR.copy()


def bearing(p_global, ego) -> float:
    """Line-of-sight angle in the ego frame, zero dead ahead, positive left."""
    lx, ly = global_to_local(p_global, ego)
    if math.hypot(lx, ly) <= MIN_RANGE:
        raise DegenerateGeometryError("target within minimum range of ego")
    return math.atan2(ly, lx)


def range_rate(state, ego, alpha: float) -> float:
    v, th = float(state[2]), float(state[3])
    v_e, th_e = float(ego[2]), float(ego[3])
    lateral = -v * math.cos(th) * math.sin(th_e) + v * math.sin(th) * math.cos(th_e)
    radial = v * math.cos(th) * math.cos(th_e) + v * math.sin(th) * math.sin(th_e) - v_e
    return lateral * math.sin(alpha) + radial * math.cos(alpha)


def range_rate_partials(state, ego, alpha: float) -> tuple[float, float]:
    """``(dRr/dv, dRr/dtheta)`` with the bearing held fixed."""
    v, th = float(state[2]), float(state[3])
    th_e = float(ego[3])
    d_v = (-math.cos(th) * math.sin(th_e) + math.sin(th) * math.cos(th_e)) * math.sin(alpha) \
        + (math.cos(th) * math.cos(th_e) + math.sin(th) * math.sin(th_e)) * math.cos(alpha)
    d_th = v * (math.sin(th) * math.sin(th_e) + math.cos(th) * math.cos(th_e)) * math.sin(alpha) \
        + v * (-math.sin(th) * math.cos(th_e) + math.cos(th) * math.sin(th_e)) * math.cos(alpha)
    return d_v, d_th


def radar_output(state, ego) -> np.ndarray:
    alpha = bearing((state[0], state[1]), ego)
    return np.array([float(state[0]), float(state[1]), range_rate(state, ego, alpha)])


def radar_matrix(state, ego) -> np.ndarray:
    alpha = bearing((state[0], state[1]), ego)
    d_v, d_th = range_rate_partials(state, ego, alpha)
    H = np.zeros((3, 4))
    H[0, 0] = H[1, 1] = 1.0
    H[2, 2] = d_v
    H[2, 3] = d_th
    return H


def range_rate_geometric(target_xy, target_v, target_theta, ego) -> float:
    """Relative velocity projected on the unit line of sight."""
    dx, dy = target_xy[0] - ego[0], target_xy[1] - ego[1]
    rng = math.hypot(dx, dy)
    if rng <= MIN_RANGE:
        raise DegenerateGeometryError("target within minimum range of ego")
    rvx = target_v * math.cos(target_theta) - ego[2] * math.cos(ego[3])
    rvy = target_v * math.sin(target_theta) - ego[2] * math.sin(ego[3])
    return (rvx * dx + rvy * dy) / rng


def heading_error(a: float, b: float) -> float:
    return wrap_angle(a - b)
