"""Gait-step MDP on top of the physics kernel.

One ``step_gait`` call is one half-cycle: the control points are turned into
per-leg foot loops, joint targets are produced by IK at every substep, and
PD control tracks them until the global phase has advanced by exactly pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..kinematics import KneeBranch, joint_state, solve_ik
from ..policy import act
from ..trajectory import (
    ControlPointSet,
    Diagnostics,
    GaitConfig,
    TrajectoryConfig,
    build_trajectory,
    foot_target,
    wrap_angle,
)
from .model import EnvConfig, RewardWeights, RobotModel
from .physics import (
    EpisodeDiverged,
    WorldState,
    orientation_angles,
    pack_params,
    run_half_step,
)


def compute_reward(delta: float, energy: float, weights: RewardWeights) -> float:
    return weights.w_vel * delta - weights.w_energy * energy


def axis_delta(axis: str, start_pos, end_pos, start_yaw: float, end_yaw: float) -> float:
    if axis == "+x":
        return float(end_pos[0] - start_pos[0])
    if axis == "-x":
        return float(start_pos[0] - end_pos[0])
    if axis == "+z":
        return float(end_pos[2] - start_pos[2])
    if axis == "+yaw":
        return wrap_angle(float(end_yaw - start_yaw))
    raise ValueError(f"unknown reward axis {axis!r}")


class EpisodeDone(RuntimeError):
    """step_gait was called after the robot fell."""


def _default_gait() -> GaitConfig:
    from ..gaits import gait_config

    return gait_config("forward_trot")


class QuadrupedEnv:
    """Desk-scale quadruped with gait-step transitions."""

    def __init__(
        self,
        model: RobotModel | None = None,
        config: EnvConfig | None = None,
        trajectory: TrajectoryConfig | None = None,
        gait: GaitConfig | None = None,
    ):
        self.model = model or RobotModel()
        self.config = config or EnvConfig()
        self.trajectory = trajectory or TrajectoryConfig()
        self.gait = gait or _default_gait()
        self.params = pack_params(self.model, self.config.contact)
        self.world: WorldState | None = None
        self.done = False
        self.time = 0.0
        self.steps = 0
        self.diagnostics = Diagnostics()

    # -- geometry helpers
    @property
    def nominal_height(self) -> float:
        t = self.trajectory
        return t.center_depth + 0.5 * (t.radius_min + t.radius_max)

    def mid_radius_points(self) -> ControlPointSet:
        t = self.trajectory
        return ControlPointSet(np.full(t.n_points, 0.5 * (t.radius_min + t.radius_max)))

    def joint_targets(self, points: ControlPointSet, phis, gait: GaitConfig, diagnostics=None) -> np.ndarray:
        """IK joint targets, shape (len(phis), 12)."""
        traj = build_trajectory(points, self.trajectory.radius_bounds)
        phis = np.asarray(phis, dtype=float)
        out = np.empty((phis.size, 12))
        for leg, geom in enumerate(self.model.legs):
            pts = foot_target(
                traj, phis, gait.phase_offsets[leg], gait.leg_planes[leg], self.trajectory, geom, diagnostics
            )
            angles, valid = solve_ik(geom, pts, KneeBranch.BACKWARD)
            if not np.all(valid):
                raise EpisodeDiverged(f"foot target outside workspace for leg {leg}")
            out[:, 3 * leg : 3 * leg + 3] = self.model.limits.clip(angles)
        return out

    def nominal_state(self, gait: GaitConfig | None = None) -> np.ndarray:
        return self.joint_targets(self.mid_radius_points(), [0.0], gait or self.gait)[0]

    def stance_state(self, height: float | None = None) -> np.ndarray:
        """Symmetric pose with every foot straight below its hip."""
        h = self.nominal_height if height is None else height
        q = np.empty(12)
        for leg, geom in enumerate(self.model.legs):
            angles, valid = solve_ik(geom, np.array([0.0, -h, 0.0]), KneeBranch.BACKWARD)
            if not valid:
                raise ValueError(f"stance height {h} unreachable")
            q[3 * leg : 3 * leg + 3] = angles
        return q

    # -- MDP
    def reset(self, gait: GaitConfig | None = None, seed: int = 0) -> np.ndarray:
        if gait is not None:
            self.gait = gait
        q0 = self.nominal_state()
        rng = np.random.default_rng(seed)
        noise = self.config.init_noise
        if noise > 0:
            q0 = self.model.limits.clip(
                (q0 + rng.uniform(-noise, noise, size=12)).reshape(4, 3)
            ).reshape(12)
        feet_y = []
        from ..kinematics import forward_kinematics

        for leg, geom in enumerate(self.model.legs):
            feet_y.append(geom.hip_offset[1] + forward_kinematics(geom, q0[3 * leg : 3 * leg + 3])[1])
        height = self.config.contact.ground_height - min(feet_y)
        self.world = WorldState.at_rest([0.0, height, 0.0], q0)
        self.done = False
        self.time = 0.0
        self.steps = 0
        self.diagnostics = Diagnostics()
        return joint_state(self.world.q)

    def step_gait(self, actions, gait: GaitConfig | None = None):
        if self.world is None:
            raise RuntimeError("call reset() before step_gait()")
        if self.done:
            raise EpisodeDone("episode already terminated; call reset()")
        gait = gait or self.gait
        points = actions if isinstance(actions, ControlPointSet) else ControlPointSet(actions)
        cfg = self.config
        K = cfg.substeps
        w = self.world
        phi0 = w.phi
        phis = phi0 + math.pi * np.arange(K + 1) / K
        q_des = self.joint_targets(points, phis, gait, self.diagnostics)
        qd_des = np.diff(q_des, axis=0) / cfg.dt

        start_pos = w.pos.copy()
        start_yaw = orientation_angles(w.quat)[2]
        fall_height = cfg.contact.ground_height + cfg.fall_height_ratio * self.nominal_height
        energy, fell, trace = run_half_step(
            w, q_des[1:], qd_des, self.model, self.params, cfg.dt,
            cfg.energy_mode, fall_height, cfg.fall_tilt,
        )
        end_yaw = orientation_angles(w.quat)[2]
        delta = axis_delta(gait.reward_axis, start_pos, w.pos, start_yaw, end_yaw)
        reward = compute_reward(delta, energy, cfg.reward)
        w.phi = math.pi if phi0 == 0.0 else 0.0
        w.energy = energy
        t0 = self.time
        self.time = t0 + K * cfg.dt
        self.steps += 1
        self.done = fell
        info = {
            "delta": delta,
            "energy": energy,
            "displacement": (w.pos - start_pos).copy(),
            "yaw_change": wrap_angle(end_yaw - start_yaw),
            "phases": phis[1:],
            "times": t0 + cfg.dt * np.arange(1, K + 1),
            "trace": trace,
            "q_des": q_des[1:],
            "clamped": self.diagnostics.clamped,
        }
        return joint_state(w.q), reward, fell, info

    step = step_gait


@dataclass(frozen=True)
class EnvFactory:
    model: RobotModel = field(default_factory=RobotModel)
    config: EnvConfig = field(default_factory=EnvConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    gait: GaitConfig = field(default_factory=_default_gait)

    def __call__(self) -> QuadrupedEnv:
        return QuadrupedEnv(self.model, self.config, self.trajectory, self.gait)


def run_episode(env, theta, seed: int, steps: int, box, on_step=None) -> float:
    """Roll the linear policy ``theta`` for ``steps`` gait steps; stops on a fall."""
    s = env.reset(seed=seed)
    total = 0.0
    for k in range(steps):
        a = act(theta, s, box)
        s, r, done, info = env.step_gait(a)
        total += r
        if on_step is not None:
            on_step(k, a, r, done, info)
        if done:
            break
    return total


@dataclass(frozen=True)
class EpisodeReturn:
    """ARS objective: episode return of a policy matrix under an env seed."""

    factory: EnvFactory
    steps: int | None = None

    def __call__(self, theta: np.ndarray, seed: int) -> float:
        env = self.factory()
        steps = self.steps or env.config.episode_steps
        return run_episode(env, theta, seed, steps, env.trajectory.radius_bounds)
