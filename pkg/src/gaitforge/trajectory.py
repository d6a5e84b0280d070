"""Closed foot trajectories from radial control points.

A trajectory is a periodic cubic Hermite spline ``w(alpha)`` over the loop
phase ``alpha in [0, 2*pi)``. Knot tangents use the centered cyclic difference
``w'_i = (w_{i+1} - w_{i-1}) / (alpha_{i+1} - alpha_{i-1})``; every segment is
mapped to a unit parameter and its tangents are scaled by the knot spacing.

The radius is drawn on a vertical plane through the hip, around a center point
directly below it. ``alpha`` is measured from the downward vertical. With
``direction=+1`` it increases toward the rear of the plane heading, so the foot
sweeps backward through the bottom of the loop and pushes the body along the
heading. ``direction=-1`` mirrors this.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import LegGeometry, WorkspaceBox, clamp_to_workspace

TWO_PI = 2.0 * math.pi
MIN_POINTS, MAX_POINTS = 6, 24

# heading of the in-plane horizontal axis for each plane family
_AXES_HEADING = {"sagittal": 0.0, "frontal": math.pi / 2, "yawed": 0.0}

REWARD_AXES = ("+x", "-x", "+z", "+yaw")


class InvalidControlPoints(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Wrap into [-pi, pi); values already in range are returned unchanged."""
    if -math.pi <= a < math.pi:
        return a
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class TrajectoryConfig:
    n_points: int = 18
    center_depth: float = 0.185
    radius_min: float = 0.01
    radius_max: float = 0.05
    box: WorkspaceBox = field(default_factory=WorkspaceBox)

    def __post_init__(self):
        if not MIN_POINTS <= self.n_points <= MAX_POINTS:
            raise ValueError(f"n_points must be in [{MIN_POINTS}, {MAX_POINTS}]")
        if not 0 <= self.radius_min < self.radius_max:
            raise ValueError("need 0 <= radius_min < radius_max")
        if self.center_depth <= 0:
            raise ValueError("center_depth must be positive")

    @property
    def radius_bounds(self) -> tuple[float, float]:
        return (self.radius_min, self.radius_max)


@dataclass(frozen=True)
class ControlPointSet:
    radii: np.ndarray

    def __post_init__(self):
        r = np.array(self.radii, dtype=float).reshape(-1)
        if not MIN_POINTS <= r.size <= MAX_POINTS:
            raise InvalidControlPoints(f"need {MIN_POINTS}..{MAX_POINTS} control points, got {r.size}")
        if not np.all(np.isfinite(r)):
            raise InvalidControlPoints("control point radii must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "radii", r)

    @property
    def n(self) -> int:
        return self.radii.size

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def phases(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing


@dataclass(frozen=True)
class FootTrajectory:
    knots: ControlPointSet
    tangents: np.ndarray

    @property
    def n(self) -> int:
        return self.knots.n


def cyclic_tangents(radii: np.ndarray, spacing: float) -> np.ndarray:
    return (np.roll(radii, -1) - np.roll(radii, 1)) / (2.0 * spacing)


def build_trajectory(points: ControlPointSet, bounds: tuple[float, float] | None = None) -> FootTrajectory:
    """Close a C1 loop through the control points.

    ``bounds`` is the allowed radius interval; pass ``None`` to skip the check.
    """
    if bounds is not None:
        lo, hi = bounds
        bad = np.flatnonzero((points.radii < lo) | (points.radii > hi))
        if bad.size:
            raise InvalidControlPoints(
                f"radii at indices {bad.tolist()} outside [{lo}, {hi}]"
            )
    t = cyclic_tangents(points.radii, points.spacing)
    t.setflags(write=False)
    return FootTrajectory(points, t)


def _segment(traj: FootTrajectory, phi):
    h = traj.knots.spacing
    a = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    i = np.minimum(np.floor(a / h).astype(int), traj.n - 1)
    t = a / h - i
    return i, (i + 1) % traj.n, t, h


def segment_value(traj: FootTrajectory, i, t):
    """Radius on segment ``i`` (from knot i to i+1) at local parameter t in [0, 1]."""
    i = np.asarray(i)
    j = (i + 1) % traj.n
    t = np.asarray(t, dtype=float)
    h = traj.knots.spacing
    w, m = traj.knots.radii, traj.tangents
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h01 = -2 * t3 + 3 * t2
    tan = (t3 - 2 * t2 + t) * h * m[i] + (t3 - t2) * h * m[j]
    # anchor on the nearer knot: exact at both ends and exact for a constant loop
    out = np.where(t < 0.5, w[i] + h01 * (w[j] - w[i]), w[j] + h00 * (w[i] - w[j])) + tan
    return float(out) if np.ndim(out) == 0 else out


def segment_derivative(traj: FootTrajectory, i, t):
    """dw/dphi on segment ``i`` at local parameter t; t = 0 and t = 1 give one-sided values at the knots."""
    i = np.asarray(i)
    j = (i + 1) % traj.n
    t = np.asarray(t, dtype=float)
    h = traj.knots.spacing
    w, m = traj.knots.radii, traj.tangents
    t2 = t * t
    d00 = 6 * t2 - 6 * t
    d01 = -6 * t2 + 6 * t
    d10 = 3 * t2 - 4 * t + 1
    d11 = 3 * t2 - 2 * t
    out = (d00 * w[i] + d01 * w[j]) / h + d10 * m[i] + d11 * m[j]
    return float(out) if np.ndim(out) == 0 else out


def evaluate(traj: FootTrajectory, phi):
    """Radius at loop phase ``phi`` (any real; wrapped)."""
    i, _, t, _ = _segment(traj, phi)
    return segment_value(traj, i, t)


def evaluate_derivative(traj: FootTrajectory, phi):
    """dw/dphi of the spline."""
    i, _, t, _ = _segment(traj, phi)
    return segment_derivative(traj, i, t)


@dataclass(frozen=True)
class GaitPlane:
    """Vertical plane through the hip that carries one leg's foot loop.

    ``yaw`` rotates the plane's horizontal axis from the plane family's base
    heading toward the robot's right (+z). ``direction`` selects which way
    the loop pushes the body along that axis.
    """

    axes: str = "sagittal"
    yaw: float = 0.0
    direction: int = 1

    def __post_init__(self):
        if self.axes not in _AXES_HEADING:
            raise ValueError(f"unknown plane axes {self.axes!r}")
        if not -math.pi <= self.yaw <= math.pi:
            raise ValueError("plane yaw must lie in [-pi, pi]")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")

    @property
    def heading(self) -> float:
        h = _AXES_HEADING[self.axes] + self.yaw
        if self.direction < 0:
            h += math.pi
        return wrap_angle(h)


@dataclass(frozen=True)
class GaitConfig:
    name: str
    leg_planes: tuple[GaitPlane, GaitPlane, GaitPlane, GaitPlane]
    phase_offsets: tuple[float, float, float, float] = (0.0, math.pi, math.pi, 0.0)
    reward_axis: str = "+x"

    def __post_init__(self):
        if len(self.leg_planes) != 4 or len(self.phase_offsets) != 4:
            raise ValueError("gait needs exactly 4 planes and 4 phase offsets")
        if self.reward_axis not in REWARD_AXES:
            raise ValueError(f"reward_axis must be one of {REWARD_AXES}")
        object.__setattr__(self, "leg_planes", tuple(self.leg_planes))
        object.__setattr__(self, "phase_offsets", tuple(float(o) for o in self.phase_offsets))


@dataclass(frozen=True)
class PhaseState:
    phi: float = 0.0
    step_duration: float = 0.15

    def __post_init__(self):
        if self.step_duration <= 0:
            raise ValueError("step_duration must be positive")
        if not 0.0 <= self.phi < TWO_PI:
            object.__setattr__(self, "phi", float(self.phi % TWO_PI))


def advance_phase(phase: PhaseState, dt: float) -> tuple[PhaseState, bool]:
    """Advance the clock; the flag is set when (phi, phi + dphi] contains 0 or pi."""
    if not 0 < dt < phase.step_duration:
        raise ValueError("need 0 < dt < step_duration")
    raw = phase.phi + math.pi * dt / phase.step_duration
    crossed = math.floor(raw / math.pi) > math.floor(phase.phi / math.pi)
    return PhaseState(raw % TWO_PI, phase.step_duration), crossed


@dataclass
class Diagnostics:
    clamped: int = 0


def heading_vector(heading: float) -> tuple[float, float]:
    """(x, z) unit vector of a heading; quarter turns are exact so planes stay flat."""
    quarter = heading / (math.pi / 2)
    if quarter == round(quarter):
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[int(round(quarter)) % 4]
    return math.cos(heading), math.sin(heading)


def plane_point(traj: FootTrajectory, alpha, heading: float, center_depth: float) -> np.ndarray:
    """Unclamped foot point (hip frame) for loop phase ``alpha`` on a plane."""
    alpha = np.asarray(alpha, dtype=float)
    w = np.asarray(evaluate(traj, alpha))
    along = -w * np.sin(alpha)
    down = w * np.cos(alpha)
    ux, uz = heading_vector(heading)
    return np.stack([along * ux, -center_depth - down, along * uz], axis=-1)


def foot_target(
    traj: FootTrajectory,
    phi,
    offset: float,
    plane: GaitPlane,
    cfg: TrajectoryConfig,
    geom: LegGeometry,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """Foot position in the hip frame at global phase ``phi`` (scalar or array)."""
    if isinstance(phi, PhaseState):
        phi = phi.phi
    p = plane_point(traj, np.asarray(phi, dtype=float) + offset, plane.heading, cfg.center_depth)
    q, n = clamp_to_workspace(geom, cfg.box, p)
    if diagnostics is not None:
        diagnostics.clamped += n
    return q


@dataclass(frozen=True)
class BlendState:
    """Filtered per-leg plane headings and phase offsets."""

    headings: tuple[float, float, float, float]
    offsets: tuple[float, float, float, float]

    @classmethod
    def from_gait(cls, gait: GaitConfig) -> "BlendState":
        return cls(tuple(p.heading for p in gait.leg_planes), tuple(gait.phase_offsets))

    def planes(self) -> tuple[GaitPlane, ...]:
        return tuple(GaitPlane("yawed", wrap_angle(h), 1) for h in self.headings)

    def as_gait(self, like: GaitConfig) -> GaitConfig:
        return GaitConfig(like.name, self.planes(), self.offsets, like.reward_axis)


def blend_gaits(
    current: GaitConfig,
    target: GaitConfig,
    alpha: float,
    state: BlendState | None = None,
) -> BlendState:
    """One gait step of a first-order low-pass filter toward ``target``.

    Headings move along the shorter arc. A state that already equals the
    target is returned unchanged, bit for bit.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if state is None:
        state = BlendState.from_gait(current)
    goal = BlendState.from_gait(target)
    headings = []
    for h, g in zip(state.headings, goal.headings):
        gap = wrap_angle(g - h)
        headings.append(g if alpha == 1 or h == g else h + alpha * gap)
    offsets = []
    for o, g in zip(state.offsets, goal.offsets):
        offsets.append(g if alpha == 1 or o == g else o + alpha * (g - o))
    return BlendState(tuple(headings), tuple(offsets))


def export_csv(
    path,
    traj: FootTrajectory,
    plane: GaitPlane,
    offset: float,
    cfg: TrajectoryConfig,
    geom: LegGeometry,
    resolution: int = 360,
) -> np.ndarray:
    """Write one leg's loop sampled over a full cycle of global phase."""
    phi = np.arange(resolution) * (TWO_PI / resolution)
    radius = np.asarray(evaluate(traj, phi + offset))
    pts = foot_target(traj, phi, offset, plane, cfg, geom)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase_rad", "radius_m", "x_m", "y_m", "z_m"])
        for k in range(resolution):
            writer.writerow([repr(float(phi[k])), repr(float(radius[k]))] + [repr(float(v)) for v in pts[k]])
    return pts
