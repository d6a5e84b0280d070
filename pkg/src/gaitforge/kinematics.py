"""Leg kinematics for a three-joint leg.

Each leg has an abduction joint followed by a planar five-bar mechanism. The
five-bar is handled as its equivalent serial 2R chain (thigh + shank), so the
planar part reduces to standard two-link geometry.

Frames: the hip frame is aligned with the body, x forward, y up, z toward the
robot's right. Angle conventions:

* abduction rotates the leg plane about +x,
* hip is measured from the downward vertical, positive swinging forward,
* knee is relative to the thigh; positive values put the knee behind the
  hip-foot line (``KneeBranch.BACKWARD``).

All functions broadcast over leading array dimensions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

#: Singularity margin kept away from full extension and full fold (meters).
EXTENSION_MARGIN = 1e-4

LEG_NAMES = ("FL", "FR", "BL", "BR")
JOINT_NAMES = ("abduction", "hip", "knee")
STATE_DIM = 12


class Unreachable(ValueError):
    """Target lies outside the leg workspace or violates joint limits."""


class KneeBranch(enum.IntEnum):
    BACKWARD = 1
    FORWARD = -1


@dataclass(frozen=True)
class LegGeometry:
    upper_link_length: float = 0.12
    lower_link_length: float = 0.145
    hip_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # signed lateral offset (along z) of the leg plane from the abduction axis
    abduction_axis_offset: float = 0.0

    def __post_init__(self):
        if not (self.upper_link_length > 0 and self.lower_link_length > 0):
            raise ValueError("link lengths must be strictly positive")
        if len(self.hip_offset) != 3:
            raise ValueError("hip_offset must be a 3-vector")
        object.__setattr__(self, "hip_offset", tuple(float(v) for v in self.hip_offset))

    @property
    def fold_radius(self) -> float:
        return abs(self.upper_link_length - self.lower_link_length)

    @property
    def extension_radius(self) -> float:
        return self.upper_link_length + self.lower_link_length

    @property
    def min_radius(self) -> float:
        return self.fold_radius + EXTENSION_MARGIN

    @property
    def max_radius(self) -> float:
        return self.extension_radius - EXTENSION_MARGIN


@dataclass(frozen=True)
class JointLimits:
    abduction: tuple[float, float] = (-0.6, 0.6)
    hip: tuple[float, float] = (-1.6, 1.6)
    knee: tuple[float, float] = (0.05, 2.9)

    def __post_init__(self):
        for name in JOINT_NAMES:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} limits must satisfy min < max, got {(lo, hi)}")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.abduction[0], self.hip[0], self.knee[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.abduction[1], self.hip[1], self.knee[1]])

    def contains(self, angles) -> np.ndarray:
        a = np.asarray(angles, dtype=float)
        return np.all((a >= self.lower) & (a <= self.upper), axis=-1)

    def clip(self, angles) -> np.ndarray:
        return np.clip(np.asarray(angles, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class LegAngles:
    abduction: float
    hip: float
    knee: float

    def as_array(self) -> np.ndarray:
        return np.array([self.abduction, self.hip, self.knee])

    @classmethod
    def from_array(cls, a) -> "LegAngles":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class WorkspaceBox:
    """Axis-aligned foot box in the hip frame."""

    lower: tuple[float, float, float] = (-0.08, -0.235, -0.08)
    upper: tuple[float, float, float] = (0.08, -0.10, 0.08)

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(lo >= hi):
            raise ValueError("box bounds must be 3-vectors with lower < upper")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    def contains(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)


def joint_state(values, limits: JointLimits | None = None) -> np.ndarray:
    """Validate and return a 12-vector ordered [FL, FR, BL, BR] x [abduction, hip, knee]."""
    s = np.array(values, dtype=float).reshape(-1)
    if s.shape != (STATE_DIM,):
        raise ValueError(f"joint state must have {STATE_DIM} entries, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("joint state has non-finite entries")
    if limits is not None and not np.all(limits.contains(s.reshape(4, 3))):
        raise ValueError("joint state violates joint limits")
    return s


def _angles_array(angles) -> np.ndarray:
    if isinstance(angles, LegAngles):
        return angles.as_array()
    return np.asarray(angles, dtype=float)


def planar_radius(geom: LegGeometry, point) -> np.ndarray:
    """Hip-to-foot distance measured inside the leg plane."""
    p = np.asarray(point, dtype=float)
    r2 = np.sum(p * p, axis=-1) - geom.abduction_axis_offset**2
    return np.sqrt(np.maximum(r2, 0.0))


def forward_kinematics(geom: LegGeometry, angles) -> np.ndarray:
    a = _angles_array(angles)
    abd, hip, knee = a[..., 0], a[..., 1], a[..., 2]
    l1, l2, d = geom.upper_link_length, geom.lower_link_length, geom.abduction_axis_offset
    px = l1 * np.sin(hip) + l2 * np.sin(hip + knee)
    py = -l1 * np.cos(hip) - l2 * np.cos(hip + knee)
    ca, sa = np.cos(abd), np.sin(abd)
    return np.stack([px, py * ca - d * sa, py * sa + d * ca], axis=-1)


def leg_jacobian(geom: LegGeometry, angles) -> np.ndarray:
    """d(foot position)/d(abduction, hip, knee), shape (..., 3, 3)."""
    a = _angles_array(angles)
    abd, hip, knee = a[..., 0], a[..., 1], a[..., 2]
    l1, l2, d = geom.upper_link_length, geom.lower_link_length, geom.abduction_axis_offset
    px = l1 * np.sin(hip) + l2 * np.sin(hip + knee)
    py = -l1 * np.cos(hip) - l2 * np.cos(hip + knee)
    dpx_dh = l1 * np.cos(hip) + l2 * np.cos(hip + knee)
    dpx_dk = l2 * np.cos(hip + knee)
    dpy_dh = l1 * np.sin(hip) + l2 * np.sin(hip + knee)
    dpy_dk = l2 * np.sin(hip + knee)
    ca, sa = np.cos(abd), np.sin(abd)
    zero = np.zeros_like(px)
    col_abd = np.stack([zero, -py * sa - d * ca, py * ca - d * sa], axis=-1)
    col_hip = np.stack([dpx_dh, dpy_dh * ca, dpy_dh * sa], axis=-1)
    col_knee = np.stack([dpx_dk, dpy_dk * ca, dpy_dk * sa], axis=-1)
    return np.stack([col_abd, col_hip, col_knee], axis=-1)


def _wrap(angle):
    return (np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi


def solve_ik(geom: LegGeometry, targets, branch: KneeBranch = KneeBranch.BACKWARD):
    """Vectorized IK. Returns ``(angles, valid)``; invalid rows hold NaN.

    The abduction angle is found first by rotating the target into the leg
    plane (foot below the abduction axis), then the planar 2R problem is
    solved for the requested knee branch.
    """
    p = np.asarray(targets, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    l1, l2, d = geom.upper_link_length, geom.lower_link_length, geom.abduction_axis_offset

    rho2 = y * y + z * z - d * d
    with np.errstate(invalid="ignore"):
        py = -np.sqrt(rho2)
        abd = _wrap(np.arctan2(z, y) - np.arctan2(d, py))
        r2 = x * x + py * py
        r = np.sqrt(r2)
        valid = (
            np.isfinite(r)
            & (rho2 >= 0)
            & (r >= geom.min_radius - 1e-12)
            & (r <= geom.max_radius + 1e-12)
        )
        cos_k = np.clip((r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0)
        knee = int(branch) * np.arccos(cos_k)
        hip = np.arctan2(x, -py) - np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    angles = np.stack([abd, hip, knee], axis=-1)
    angles = np.where(valid[..., None], angles, np.nan)
    return angles, valid


def inverse_kinematics(
    geom: LegGeometry,
    target,
    branch: KneeBranch = KneeBranch.BACKWARD,
    limits: JointLimits | None = None,
) -> LegAngles:
    target = np.asarray(target, dtype=float)
    if target.shape != (3,):
        raise ValueError("target must be a 3-vector; use solve_ik for batches")
    angles, valid = solve_ik(geom, target, branch)
    if not valid:
        r = float(planar_radius(geom, target))
        raise Unreachable(
            f"target {target.tolist()} (planar radius {r:.5f} m) outside "
            f"[{geom.min_radius:.5f}, {geom.max_radius:.5f}]"
        )
    if limits is not None and not limits.contains(angles):
        raise Unreachable(f"IK solution {angles.tolist()} violates joint limits")
    return LegAngles.from_array(angles)


def in_annulus(geom: LegGeometry, point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    r2 = np.sum(p * p, axis=-1) - geom.abduction_axis_offset**2
    r = np.sqrt(np.maximum(r2, 0.0))
    return (r2 >= 0) & (r >= geom.min_radius) & (r <= geom.max_radius)


def workspace_contains(geom: LegGeometry, box: WorkspaceBox, point) -> np.ndarray:
    """True where the point is both kinematically reachable and inside the box."""
    return in_annulus(geom, point) & box.contains(point)


def clamp_to_workspace(geom: LegGeometry, box: WorkspaceBox, point):
    """Clamp into the box, then pull radially into the annulus.

    Returns ``(clamped, n_changed)``. The radial step shrinks toward the hip,
    which keeps the point inside a box lying entirely below the hip.
    """
    p = np.asarray(point, dtype=float)
    q = np.clip(p, box.lower, box.upper)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    d2 = geom.abduction_axis_offset**2
    r = np.sqrt(np.maximum(norm**2 - d2, 0.0))
    # shrink slightly inside the margin so the result passes the strict test
    r_cap = geom.max_radius * (1 - 1e-12)
    scale = np.where(r > r_cap, np.sqrt(r_cap**2 + d2) / np.maximum(norm, 1e-300), 1.0)
    q = q * scale
    changed = np.any(q != p, axis=-1)
    return q, int(np.count_nonzero(changed))
