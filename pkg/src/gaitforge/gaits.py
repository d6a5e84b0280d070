"""Gait library and multi-gait scoring.

All gaits run the same loop on every leg with trot phase offsets
(FL, FR, BL, BR) = (0, pi, pi, 0); they differ in the plane each loop is
drawn on, the push direction along that plane, and the reward axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from types import MappingProxyType

import numpy as np

from .trajectory import GaitConfig, GaitPlane

TROT_OFFSETS = (0.0, math.pi, math.pi, 0.0)
QUARTER = math.pi / 4


class UnknownGait(KeyError):
    pass


def _uniform(plane: GaitPlane) -> tuple[GaitPlane, ...]:
    return (plane,) * 4


# Turn: plane yaws FL +45, FR -45, BL -45, BR +45 (front planes point inward,
# back planes outward). Left legs push forward and right legs push backward,
# which yaws the body toward the right (positive yaw).
_LIBRARY = {
    "forward_trot": GaitConfig("forward_trot", _uniform(GaitPlane("sagittal", 0.0, 1)), TROT_OFFSETS, "+x"),
    "backward_trot": GaitConfig("backward_trot", _uniform(GaitPlane("sagittal", 0.0, -1)), TROT_OFFSETS, "-x"),
    "side_step": GaitConfig("side_step", _uniform(GaitPlane("frontal", 0.0, 1)), TROT_OFFSETS, "+z"),
    "turn": GaitConfig(
        "turn",
        (
            GaitPlane("yawed", QUARTER, 1),
            GaitPlane("yawed", -QUARTER, -1),
            GaitPlane("yawed", -QUARTER, 1),
            GaitPlane("yawed", QUARTER, -1),
        ),
        TROT_OFFSETS,
        "+yaw",
    ),
}

GAIT_NAMES = tuple(_LIBRARY)
GAIT_LIBRARY = MappingProxyType(_LIBRARY)


def gait_config(name: str) -> GaitConfig:
    try:
        gait = _LIBRARY[name]
    except KeyError:
        raise UnknownGait(f"unknown gait {name!r}; choose from {', '.join(GAIT_NAMES)}") from None
    # GaitConfig is frozen with tuple fields, a shallow copy is a full copy
    return replace(gait)


def override_gait(base: GaitConfig, planes=None, offsets=None, reward_axis=None) -> GaitConfig:
    return GaitConfig(
        base.name,
        tuple(planes) if planes is not None else base.leg_planes,
        tuple(offsets) if offsets is not None else base.phase_offsets,
        reward_axis or base.reward_axis,
    )


@dataclass(frozen=True)
class MultiGaitSpec:
    entries: tuple[tuple[GaitConfig, float], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("multi-gait spec needs at least one entry")
        for gait, weight in self.entries:
            if not weight > 0:
                raise ValueError(f"weight for {gait.name} must be positive")
        object.__setattr__(self, "entries", tuple((g, float(w)) for g, w in self.entries))

    @classmethod
    def of(cls, *names: str, weights=None) -> "MultiGaitSpec":
        weights = weights or [1.0] * len(names)
        return cls(tuple((gait_config(n), w) for n, w in zip(names, weights, strict=True)))


class GaitEvaluationError(RuntimeError):
    def __init__(self, gait: str, cause: Exception):
        super().__init__(f"gait {gait!r}: {cause}")
        self.gait = gait
        self.cause = cause


def multi_gait_return(theta: np.ndarray, spec: MultiGaitSpec, objective_for, seed: int) -> float:
    """Weighted sum of per-gait episode returns under one shared policy.

    ``objective_for(gait)`` returns a callable ``(theta, seed) -> return``
    evaluated in its own environment instance. Terms are summed in spec order.
    """
    total = 0.0
    for gait, weight in spec.entries:
        try:
            ret = objective_for(gait)(theta, seed)
        except Exception as exc:
            raise GaitEvaluationError(gait.name, exc) from exc
        total += weight * ret
    return total


@dataclass(frozen=True)
class MultiGaitObjective:
    """Picklable ARS objective combining several gaits."""

    spec: MultiGaitSpec
    factory: object  # EnvFactory used as a template; its gait is replaced per entry
    steps: int | None = None

    def objective_for(self, gait: GaitConfig):
        from .env import EpisodeReturn

        return EpisodeReturn(replace(self.factory, gait=gait), self.steps)

    def __call__(self, theta: np.ndarray, seed: int) -> float:
        return multi_gait_return(theta, self.spec, self.objective_for, seed)
