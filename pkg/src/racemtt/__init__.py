"""Latency-aware LiDAR/RADAR multi-target tracking for racing vehicles."""

from racemtt.config import ConfigError, EngineConfig
from racemtt.engine import EngineSnapshot, TrackingEngine, TrackOutput
from racemtt.geometry import ReferenceTrajectory, build_from_centerline, closest_point, yaw_rate_input
from racemtt.measurement import EgoState, Measurement, Sensor
from racemtt.motion import TargetState

__all__ = [
    "ConfigError",
    "EgoState",
    "EngineConfig",
    "EngineSnapshot",
    "Measurement",
    "ReferenceTrajectory",
    "Sensor",
    "TargetState",
    "TrackOutput",
    "TrackingEngine",
    "build_from_centerline",
    "closest_point",
    "yaw_rate_input",
]
