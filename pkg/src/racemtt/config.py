"""Engine configuration shared by every scenario run."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from racemtt.tracks import FsmConfig


class ConfigError(ValueError):
    """A configuration value violates one of its invariants."""


@dataclass
class EngineConfig:
    # process noise rate per state component, units^2 / s
    q_rate: list[float] = field(default_factory=lambda: [0.001, 0.001, 1.5, 2e-5])
    # ego-frame sensor noise standard deviations
    lidar_std: list[float] = field(default_factory=lambda: [0.15, 0.15])
    radar_std: list[float] = field(default_factory=lambda: [0.5, 0.5, 0.3])
    gate: float = 13.8
    fsm_M: int = 10
    fsm_th_acc: int = 3
    fsm_th_conf: int = 6
    fsm_th_elim: int = 2
    eps_omega: float = 1e-6
    omega_max: float = 2.0
    rho_max: float = 0.1
    psm_horizon: float = 1.0
    engine_rate: float = 33.0
    init_v_std: float = 20.0
    init_theta_std: float = 0.5
    spawn_pos_std: float = 4.0
    spawn_v_std: float = 90.0
    spawn_theta_std: float = math.pi
    init_min_dt: float = 0.04
    delay_compensation: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def fsm(self) -> FsmConfig:
        return FsmConfig(self.fsm_M, self.fsm_th_acc, self.fsm_th_conf, self.fsm_th_elim)

    def R_lidar(self) -> np.ndarray:
        return np.diag(np.square(self.lidar_std))

    def R_radar(self) -> np.ndarray:
        return np.diag(np.square(self.radar_std))

    def P_spawn(self) -> np.ndarray:
        return np.diag([self.spawn_pos_std ** 2, self.spawn_pos_std ** 2,
                        self.spawn_v_std ** 2, self.spawn_theta_std ** 2])

    def validate(self) -> None:
        def need(ok, rule):
            if not ok:
                raise ConfigError(rule)

        need(len(self.q_rate) == 4 and all(q >= 0 for q in self.q_rate),
             "q_rate must have 4 non-negative entries")
        need(len(self.lidar_std) == 2 and all(s > 0 for s in self.lidar_std),
             "lidar_std must have 2 positive entries")
        need(len(self.radar_std) == 3 and all(s > 0 for s in self.radar_std),
             "radar_std must have 3 positive entries")
        need(self.gate > 0, "gate must be positive")
        try:
            self.fsm
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        need(self.eps_omega > 0, "eps_omega must be positive")
        need(self.omega_max > 0, "omega_max must be positive")
        need(self.rho_max > 0, "rho_max must be positive")
        need(self.psm_horizon > 0, "psm_horizon must be positive")
        need(self.engine_rate > 0, "engine_rate must be positive")
        need(self.init_min_dt >= 0, "init_min_dt must be non-negative")
        for name in ("init_v_std", "init_theta_std", "spawn_pos_std", "spawn_v_std", "spawn_theta_std"):
            need(getattr(self, name) > 0, f"{name} must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown engine config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "EngineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
