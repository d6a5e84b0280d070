"""Run configuration: one YAML document, strict keys, one seed.

Example::

    seed: 7
    out: runs/trot
    gait: forward_trot          # or  gaits: {forward_trot: 1.0, turn: 0.5}
    robot: {mass: 4.0, kp: 30.0}
    env: {episode_steps: 20, friction: 0.8}
    trajectory: {radius_min: 0.01, radius_max: 0.05}
    ars: {iterations: 40, workers: 4}
    gait_override: {offsets: [0, 3.14159, 3.14159, 0]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import yaml

from .ars import DESK_SCALE, ArsConfig
from .env import ContactParams, EnvConfig, EnvFactory, RewardWeights, RobotModel, default_legs
from .gaits import GAIT_NAMES, MultiGaitSpec, gait_config, override_gait
from .trajectory import GaitConfig, TrajectoryConfig


class ConfigError(ValueError):
    pass


# section -> allowed keys
ROBOT_KEYS = ("mass", "kp", "kd", "torque_cap", "joint_inertia", "gravity", "upper", "lower", "hip_x", "hip_z")
ENV_KEYS = (
    "dt", "step_duration", "episode_steps", "stiffness", "damping", "friction",
    "energy_mode", "fall_height_ratio", "fall_tilt", "init_noise", "w_vel", "w_energy",
)
TRAJECTORY_KEYS = ("n_points", "center_depth", "radius_min", "radius_max")
GAIT_OVERRIDE_KEYS = ("yaws", "offsets", "reward_axis")
LIST_KEYS = ("yaws", "offsets")
ARS_KEYS = ("beta", "nu", "N", "b", "iterations", "workers", "scale", "checkpoint_every", "initial_radius")
SCHEMA = {
    "seed": None,
    "out": None,
    "gait": None,
    "gaits": "*",
    "robot": ROBOT_KEYS,
    "env": ENV_KEYS,
    "trajectory": TRAJECTORY_KEYS,
    "ars": ARS_KEYS,
    "gait_override": GAIT_OVERRIDE_KEYS,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    gaits: tuple[tuple[str, float], ...] = (("forward_trot", 1.0),)
    robot: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    ars: dict = field(default_factory=dict)
    gait_override: dict = field(default_factory=dict)

    @property
    def primary_gait(self) -> str:
        return self.gaits[0][0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gaits"] = {name: w for name, w in self.gaits}
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- builders
    def robot_model(self) -> RobotModel:
        r = dict(self.robot)
        geo = {k: r.pop(k) for k in ("upper", "lower", "hip_x", "hip_z") if k in r}
        return RobotModel(legs=default_legs(**geo), **r)

    def env_config(self) -> EnvConfig:
        e = dict(self.env)
        contact = ContactParams(**{k: e.pop(k) for k in ("stiffness", "damping", "friction") if k in e})
        reward = RewardWeights(**{k: e.pop(k) for k in ("w_vel", "w_energy") if k in e})
        return EnvConfig(contact=contact, reward=reward, **e)

    def trajectory_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(**self.trajectory)

    def gait(self, name: str | None = None) -> GaitConfig:
        """Library gait with the config's overrides applied (per-leg yaws keep each plane's family)."""
        base = gait_config(name or self.primary_gait)
        o = self.gait_override
        if not o:
            return base
        planes = None
        if "yaws" in o:
            planes = [replace(p, yaw=float(y)) for p, y in zip(base.leg_planes, o["yaws"], strict=True)]
        offsets = [float(v) for v in o["offsets"]] if "offsets" in o else None
        return override_gait(base, planes, offsets, o.get("reward_axis"))

    def factory(self, gait: str | None = None) -> EnvFactory:
        return EnvFactory(self.robot_model(), self.env_config(), self.trajectory_config(), self.gait(gait))

    def multi_gait(self) -> MultiGaitSpec:
        return MultiGaitSpec(tuple((self.gait(g), w) for g, w in self.gaits))

    def ars_config(self) -> ArsConfig:
        a = self.ars
        base = ArsConfig.for_gait(self.primary_gait, a.get("scale", DESK_SCALE))
        return replace(
            base,
            step_size_beta=a.get("beta", base.step_size_beta),
            noise_nu=a.get("nu", base.noise_nu),
            num_directions_N=a.get("N", base.num_directions_N),
            top_directions_b=a.get("b", base.top_directions_b),
            iterations=a.get("iterations", base.iterations),
            workers=a.get("workers", base.workers),
            seed=self.seed,
        )

    @property
    def checkpoint_every(self) -> int:
        return int(self.ars.get("checkpoint_every", 10))

    @property
    def initial_radius(self) -> float:
        return float(self.ars.get("initial_radius", self.trajectory_config().radius_min))

    def validate(self) -> "RunConfig":
        """Build every component once so bad values fail early."""
        try:
            self.robot_model()
            self.env_config()
            self.trajectory_config()
            self.multi_gait()
            self.factory()
            self.ars_config()
            if self.checkpoint_every < 1:
                raise ValueError("checkpoint_every must be positive")
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _where(node) -> str:
    return f"line {node.start_mark.line + 1}, column {node.start_mark.column + 1}"


def _check_keys(root, source: str) -> None:
    if root is None:
        return
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{source}: {_where(root)}: top level must be a mapping")
    for key, value in root.value:
        name = key.value
        if name not in SCHEMA:
            raise ConfigError(f"{source}: {_where(key)}: unknown key {name!r}")
        allowed = SCHEMA[name]
        if allowed is None:
            if not isinstance(value, yaml.ScalarNode):
                raise ConfigError(f"{source}: {_where(value)}: {name!r} must be a scalar")
            continue
        if not isinstance(value, yaml.MappingNode):
            raise ConfigError(f"{source}: {_where(value)}: section {name!r} must be a mapping")
        for sub, subval in value.value:
            if allowed == "*":
                if sub.value not in GAIT_NAMES:
                    raise ConfigError(f"{source}: {_where(sub)}: unknown gait {sub.value!r}")
            elif sub.value not in allowed:
                raise ConfigError(f"{source}: {_where(sub)}: unknown key {name}.{sub.value}")
            if sub.value in LIST_KEYS and isinstance(subval, yaml.SequenceNode):
                if all(isinstance(v, yaml.ScalarNode) for v in subval.value):
                    continue
            if not isinstance(subval, yaml.ScalarNode):
                raise ConfigError(f"{source}: {_where(subval)}: {name}.{sub.value} must be a scalar")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        _check_keys(root, source)
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{source}: {where}{getattr(exc, 'problem', None) or exc}") from None
    return from_dict(doc)


def from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    if "gait" in doc and "gaits" in doc:
        raise ConfigError("give either 'gait' or 'gaits', not both")
    if "gait" in doc:
        gaits = ((str(doc.pop("gait")), 1.0),)
    elif "gaits" in doc:
        gaits = tuple((str(k), float(v)) for k, v in doc.pop("gaits").items())
    else:
        gaits = RunConfig.gaits
    for name, _ in gaits:
        if name not in GAIT_NAMES:
            raise ConfigError(f"unknown gait {name!r}; choose from {', '.join(GAIT_NAMES)}")
    unknown = set(doc) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(
        seed=seed,
        out=str(doc.get("out", RunConfig.out)),
        gaits=gaits,
        robot=dict(doc.get("robot") or {}),
        env=dict(doc.get("env") or {}),
        trajectory=dict(doc.get("trajectory") or {}),
        ars=dict(doc.get("ars") or {}),
        gait_override=dict(doc.get("gait_override") or {}),
    ).validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
