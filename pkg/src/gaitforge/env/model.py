"""Robot, contact and reward parameters for the simulated quadruped."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..kinematics import LEG_NAMES, JointLimits, LegGeometry

ENERGY_MODES = ("positive_work", "signed", "absolute")

# hip pivots in the body frame (x forward, y up, z right)
DEFAULT_HIP_X = 0.15
DEFAULT_HIP_Z = 0.08


def default_legs(
    upper: float = 0.12,
    lower: float = 0.145,
    hip_x: float = DEFAULT_HIP_X,
    hip_z: float = DEFAULT_HIP_Z,
    abduction_offset: float = 0.0,
) -> tuple[LegGeometry, ...]:
    legs = []
    for name in LEG_NAMES:
        sx = 1.0 if name[0] == "F" else -1.0
        sz = 1.0 if name[1] == "R" else -1.0
        legs.append(
            LegGeometry(upper, lower, (sx * hip_x, 0.0, sz * hip_z), sz * abduction_offset)
        )
    return tuple(legs)


@dataclass(frozen=True)
class RobotModel:
    mass: float = 4.0
    # principal inertia about body x (roll), y (yaw), z (pitch)
    inertia: tuple[float, float, float] = (0.0167, 0.0667, 0.0567)
    legs: tuple[LegGeometry, ...] = field(default_factory=default_legs)
    limits: JointLimits = field(default_factory=JointLimits)
    kp: float = 30.0
    kd: float = 0.5
    torque_cap: float = 4.0
    # reflected rotor inertia per joint; legs themselves are massless
    joint_inertia: float = 0.003
    gravity: float = 9.81

    def __post_init__(self):
        if len(self.legs) != 4:
            raise ValueError("robot needs exactly 4 legs")
        vals = [self.mass, *self.inertia, self.kp, self.kd, self.torque_cap, self.joint_inertia]
        if min(vals) <= 0:
            raise ValueError("mass, inertia, gains, torque cap and joint inertia must be positive")
        if self.gravity < 0:
            raise ValueError("gravity must be nonnegative")

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.diag(self.inertia)


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 8000.0
    damping: float = 80.0
    friction: float = 0.8
    ground_height: float = 0.0

    def __post_init__(self):
        if min(self.stiffness, self.damping, self.friction) < 0:
            raise ValueError("contact parameters must be nonnegative")
        if self.friction > 1.5:
            raise ValueError("friction coefficient must not exceed 1.5")


@dataclass(frozen=True)
class RewardWeights:
    w_vel: float = 50.0
    w_energy: float = 0.5

    def __post_init__(self):
        if self.w_vel < 0 or self.w_energy < 0:
            raise ValueError("reward weights must be nonnegative")


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.001
    step_duration: float = 0.15
    episode_steps: int = 20
    contact: ContactParams = field(default_factory=ContactParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    energy_mode: str = "positive_work"
    fall_height_ratio: float = 0.6
    fall_tilt: float = 0.6
    init_noise: float = 0.01

    def __post_init__(self):
        if not 0 < self.dt <= 0.002:
            raise ValueError("dt must lie in (0, 2 ms]")
        n = self.step_duration / self.dt
        if abs(n - round(n)) > 1e-9 or round(n) < 2:
            raise ValueError("step_duration must be an integer multiple (>= 2) of dt")
        if self.episode_steps < 1:
            raise ValueError("episode_steps must be positive")
        if self.energy_mode not in ENERGY_MODES:
            raise ValueError(f"energy_mode must be one of {ENERGY_MODES}")
        if not 0 <= self.init_noise <= 0.01:
            raise ValueError("init_noise must lie in [0, 0.01] rad")

    @property
    def substeps(self) -> int:
        return int(round(self.step_duration / self.dt))
