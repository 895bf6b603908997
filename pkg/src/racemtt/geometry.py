"""Racetrack reference trajectory and the curvature-driven yaw-rate input.

The reference trajectory is a sampled polyline in the global frame. Each
sample carries a signed curvature (positive for counter-clockwise turning)
obtained from a circumscribed-circle fit over a symmetric arc-length window.
A bucketed spatial grid answers closest-sample queries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np

RHO_MAX = 0.1
OMEGA_MAX = 2.0
CURVATURE_WINDOW = 5.0
GRID_CELL = 10.0
MIN_SPACING = 1e-3
CLOSURE_TOL = 1e-6


def three_point_curvature(a, b, c) -> float:
    """Signed curvature of the circle through ``a``, ``b``, ``c``.

    Positive when the points turn counter-clockwise. Collinear or
    coincident points give zero.
    """
    abx, aby = b[0] - a[0], b[1] - a[1]
    acx, acy = c[0] - a[0], c[1] - a[1]
    bcx, bcy = c[0] - b[0], c[1] - b[1]
    cross = abx * acy - aby * acx
    denom = math.hypot(abx, aby) * math.hypot(acx, acy) * math.hypot(bcx, bcy)
    if denom == 0.0:
        return 0.0
    return 2.0 * cross / denom


class _GridIndex:
    """Uniform-grid bucket index over trajectory samples."""

    def __init__(self, points: np.ndarray, cell: float):
        self.cell = cell
        self.points = points
        keys = np.floor(points / cell).astype(np.int64)
        self.buckets: dict[tuple[int, int], np.ndarray] = {}
        order = np.lexsort((np.arange(len(points)), keys[:, 1], keys[:, 0]))
        sorted_keys = keys[order]
        splits = np.flatnonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1)) + 1
        for chunk in np.split(order, splits):
            k = keys[chunk[0]]
            self.buckets[(int(k[0]), int(k[1]))] = np.sort(chunk)
        self.kmin = keys.min(axis=0)
        self.kmax = keys.max(axis=0)

    def nearest(self, qx: float, qy: float) -> tuple[int, float]:
        cx = math.floor(qx / self.cell)
        cy = math.floor(qy / self.cell)
        # rings beyond this radius cannot hold any sample
        r_max = int(max(abs(cx - self.kmin[0]), abs(cx - self.kmax[0]),
                        abs(cy - self.kmin[1]), abs(cy - self.kmax[1])))
        best_i, best_d2 = -1, math.inf
        for r in range(r_max + 1):
            for key in _ring(cx, cy, r):
                idx = self.buckets.get(key)
                if idx is None:
                    continue
                pts = self.points[idx]
                dx = pts[:, 0] - qx
                dy = pts[:, 1] - qy
                d2 = dx * dx + dy * dy
                j = int(np.argmin(d2))
                if d2[j] < best_d2 or (d2[j] == best_d2 and idx[j] < best_i):
                    best_d2 = float(d2[j])
                    best_i = int(idx[j])
            # every unvisited sample lies at least r cells away
            if best_i >= 0 and math.sqrt(best_d2) < r * self.cell:
                break
        return best_i, best_d2


def _ring(cx: int, cy: int, r: int):
    if r == 0:
        yield (cx, cy)
        return
    for dx in range(-r, r + 1):
        yield (cx + dx, cy - r)
        yield (cx + dx, cy + r)
    for dy in range(-r + 1, r):
        yield (cx - r, cy + dy)
        yield (cx + r, cy + dy)


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Immutable sampled reference path.

    Attributes
    ----------
    points : ndarray, shape (N, 2)
        Global-frame samples in meters.
    curvature : ndarray, shape (N,)
        Signed curvature per sample, 1/m.
    closed : bool
        Whether the path is a loop (first and last sample coincide).
    arc_length : ndarray, shape (N,)
        Cumulative arc length in meters.
    """

    points: np.ndarray
    curvature: np.ndarray
    closed: bool
    arc_length: np.ndarray
    rho_max: float = RHO_MAX
    _index: _GridIndex = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.points, self.curvature, self.arc_length):
            arr.setflags(write=False)
        if self._index is None:
            object.__setattr__(self, "_index", _GridIndex(self.points, GRID_CELL))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])


def _validate_centerline(centerline, closed: bool) -> np.ndarray:
    pts = np.asarray(centerline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("centerline must be a sequence of (x, y) pairs")
    if np.isnan(pts).any() or not np.isfinite(pts).all():
        raise ValueError("centerline contains NaN or non-finite coordinates")
    if len(np.unique(pts, axis=0)) < 3:
        raise ValueError("centerline needs at least 3 distinct points")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    if (seg < MIN_SPACING).any():
        i = int(np.argmax(seg < MIN_SPACING))
        raise ValueError(f"consecutive points {i} and {i + 1} closer than {MIN_SPACING} m")
    if closed and np.hypot(*(pts[-1] - pts[0])) > CLOSURE_TOL:
        # close the loop explicitly
        pts = np.vstack([pts, pts[:1]])
    return pts


def build_from_centerline(
    centerline: Sequence[Sequence[float]],
    closed: bool,
    window: float = CURVATURE_WINDOW,
    rho_max: float = RHO_MAX,
    curvature: Sequence[float] | None = None,
) -> ReferenceTrajectory:
    """Build a reference trajectory with per-sample curvature.

    Parameters
    ----------
    centerline
        Ordered (x, y) samples in meters.
    closed
        Treat the path as a loop. If the last sample does not already
        coincide with the first, the first is appended.
    window
        Half-width of the arc-length window for the three-point fit.
    rho_max
        Curvature magnitude cap.
    curvature
        Precomputed curvature, bypassing the fit (still clamped).
    """
    pts = _validate_centerline(centerline, closed)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = len(pts)

    if curvature is not None:
        rho = np.asarray(curvature, dtype=float)
        if closed and len(rho) == n - 1:
            rho = np.append(rho, rho[0])
        if rho.shape != (n,):
            raise ValueError("curvature length does not match centerline")
    elif closed:
        rho = _closed_curvature(pts, s, window)
    else:
        rho = _open_curvature(pts, s, window)

    rho = np.clip(rho, -rho_max, rho_max)
    return ReferenceTrajectory(pts, rho, closed, s, rho_max)


def _open_curvature(pts, s, window):
    n = len(pts)
    rho = np.zeros(n)
    for i in range(1, n - 1):
        lo = int(np.searchsorted(s, s[i] - window, side="left"))
        hi = int(np.searchsorted(s, s[i] + window, side="right")) - 1
        # symmetric in index count, shrunk near the ends
        k = max(1, min(i - lo, hi - i))
        rho[i] = three_point_curvature(pts[i - k], pts[i], pts[i + k])
    rho[0] = rho[1]
    rho[-1] = rho[-2]
    return rho


def _closed_curvature(pts, s, window):
    # drop the duplicated closing sample and work modulo the loop length
    ring = pts[:-1]
    m = len(ring)
    total = s[-1]
    s_ext = np.concatenate([s[:-1] - total, s[:-1], s[:-1] + total])
    idx = np.arange(m) + m
    k_fwd = np.searchsorted(s_ext, s_ext[idx] + window, side="right") - 1 - idx
    k_bwd = idx - np.searchsorted(s_ext, s_ext[idx] - window, side="left")
    ks = np.clip(np.minimum(k_fwd, k_bwd), 1, max(1, (m - 1) // 2))
    rho = np.empty(m)
    for i in range(m):
        k = int(ks[i])
        rho[i] = three_point_curvature(ring[(i - k) % m], ring[i], ring[(i + k) % m])
    return np.append(rho, rho[0])


def load_centerline_csv(path: str | PathLike, closed: bool = True, **kwargs) -> ReferenceTrajectory:
    """Read a ``x,y[,rho]`` CSV and build the trajectory."""
    xs, ys, rhos = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain x,y")
        has_rho = "rho" in reader.fieldnames
        for row in reader:
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
            if has_rho:
                rhos.append(float(row["rho"]))
    return build_from_centerline(
        np.column_stack([xs, ys]), closed, curvature=rhos if has_rho else None, **kwargs
    )


def save_centerline_csv(traj: ReferenceTrajectory, path: str | PathLike, with_rho: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "rho"] if with_rho else ["x", "y"])
        for (x, y), r in zip(traj.points, traj.curvature):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(r))] if with_rho
                       else [repr(float(x)), repr(float(y))])


def closest_point(traj: ReferenceTrajectory, query) -> tuple[int, float, float]:
    """Return ``(index, curvature, distance)`` of the nearest sample.

    Ties resolve to the lowest index.
    """
    i, d2 = traj._index.nearest(float(query[0]), float(query[1]))
    return i, float(traj.curvature[i]), math.sqrt(d2)


def closest_point_bruteforce(traj: ReferenceTrajectory, query) -> tuple[int, float, float]:
    dx = traj.points[:, 0] - float(query[0])
    dy = traj.points[:, 1] - float(query[1])
    d2 = dx * dx + dy * dy
    i = int(np.argmin(d2))
    return i, float(traj.curvature[i]), math.sqrt(float(d2[i]))


def yaw_rate_input(traj: ReferenceTrajectory | None, state, omega_max: float = OMEGA_MAX) -> float:
    """Yaw-rate exogenous input: speed times curvature at the closest sample.

    ``traj=None`` means no track knowledge, which yields zero.
    """
    if traj is None:
        return 0.0
    _, rho, _ = closest_point(traj, (state[0], state[1]))
    omega = float(state[2]) * rho
    return min(max(omega, -omega_max), omega_max)
