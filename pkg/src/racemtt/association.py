"""Global nearest neighbour association with Mahalanobis gating."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

DEFAULT_GATE = 13.8
MAX_CONDITION = 1e12


@dataclass
class AssignmentResult:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unassigned_tracks: list[int] = field(default_factory=list)
    unassigned_measurements: list[int] = field(default_factory=list)


def mahalanobis(predicted, S_pos, meas) -> float:
    """Squared Mahalanobis distance between a predicted and measured position.

    A singular ``S_pos`` makes the pair ungateable (``inf``).
    """
    S = np.asarray(S_pos, dtype=float)
    e = np.array([predicted[0] - meas[0], predicted[1] - meas[1]], dtype=float)
    if not np.isfinite(S).all() or np.linalg.cond(S) > MAX_CONDITION:
        return float("inf")
    return float(e @ np.linalg.solve(S, e))


def build_cost_matrix(predicted, S_pos, measurements, gate: float = DEFAULT_GATE):
    """Pairwise squared distances plus a boolean mask of allowed pairs.

    Parameters
    ----------
    predicted : sequence of (x, y)
        Predicted track positions.
    S_pos : sequence of 2x2 arrays, or a callable ``S_pos(i, j)``
        Position block of the innovation covariance per track, or per
        track/measurement pair when the measurement noise differs.
    measurements : sequence of (x, y)
        Globalized measurement positions.
    """
    n, m = len(predicted), len(measurements)
    cost = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(m):
            S = S_pos(i, j) if callable(S_pos) else S_pos[i]
            cost[i, j] = mahalanobis(predicted[i], S, measurements[j])
    allowed = cost <= gate
    return cost, allowed


def solve_assignment(cost, allowed=None) -> AssignmentResult:
    """Minimum-cost matching restricted to allowed entries.

    Forbidden entries are priced above any combination of allowed ones, so
    the solver first maximises the number of allowed pairs and then
    minimises their total cost. Any forbidden pair the solver is forced to
    pick is discarded and its row and column reported unassigned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if allowed is None:
        allowed = np.isfinite(cost)
    allowed = np.asarray(allowed, dtype=bool) & np.isfinite(cost)
    result = AssignmentResult()
    if n == 0 or m == 0:
        result.unassigned_tracks = list(range(n))
        result.unassigned_measurements = list(range(m))
        return result

    finite = np.where(allowed, cost, 0.0)
    sentinel = 2.0 * np.abs(finite).sum() + 1.0
    work = np.where(allowed, cost, sentinel)
    rows, cols = linear_sum_assignment(work)

    matched_r, matched_c = set(), set()
    for r, c in zip(rows.tolist(), cols.tolist()):
        if allowed[r, c]:
            result.pairs.append((r, c))
            matched_r.add(r)
            matched_c.add(c)
    result.unassigned_tracks = [i for i in range(n) if i not in matched_r]
    result.unassigned_measurements = [j for j in range(m) if j not in matched_c]
    return result


def total_cost(cost, result: AssignmentResult) -> float:
    return float(sum(cost[r][c] for r, c in sorted(result.pairs)))
