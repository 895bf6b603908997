"""LiDAR and RADAR measurement models for a target ahead of the ego car."""

import math

import numpy as np

from racemtt.measurement import EgoState, bearing, radar_matrix, radar_output, range_rate

ego = EgoState(0.0, 0.0, 60.0, 0.0)
# opponent 30 m ahead, 3 m to the left, slightly faster and turning in
target = np.array([30.0, 3.0, 65.0, math.radians(-2.0)])

alpha = bearing(target[:2], ego)
print(f"bearing {math.degrees(alpha):.3f} deg")
print(f"range rate {range_rate(target, ego, alpha):.4f} m/s (positive = opening)")
print("RADAR output [x, y, rr]:", np.round(radar_output(target, ego), 4))
np.set_printoptions(precision=5, suppress=True)
print("RADAR Jacobian with the bearing held fixed:\n", radar_matrix(target, ego))
