"""Floating-base quadruped physics with massless legs and penalty contact.

The torso is a single rigid body. Each leg is a massless kinematic chain
whose joints carry a small reflected rotor inertia and are driven by the
commanded torques plus the ground reaction mapped through the leg Jacobian.
Foot contact is a spring-damper in the normal direction and an anchored
tangential spring-damper capped by Coulomb friction.

The inner loops are compiled with numba; ``physics_substep`` and
``run_half_step`` share the same compiled substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from ..kinematics import forward_kinematics
from .model import ENERGY_MODES, ContactParams, RobotModel


class EpisodeDiverged(RuntimeError):
    """The simulation produced a non-finite state."""


@dataclass
class WorldState:
    pos: np.ndarray
    quat: np.ndarray  # (w, x, y, z), body -> world
    vel: np.ndarray  # world frame
    omega: np.ndarray  # body frame
    q: np.ndarray
    qd: np.ndarray
    phi: float = 0.0
    energy: float = 0.0
    # contact memory: tangential anchor per foot and whether it is active
    anchor: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    anchored: np.ndarray = field(default_factory=lambda: np.zeros(4))
    # last ground reaction on each foot, world frame
    contact_force: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))

    def copy(self) -> "WorldState":
        return replace(
            self,
            **{
                k: getattr(self, k).copy()
                for k in ("pos", "quat", "vel", "omega", "q", "qd", "anchor", "anchored", "contact_force")
            },
        )

    @classmethod
    def at_rest(cls, pos, q) -> "WorldState":
        return cls(
            pos=np.array(pos, dtype=float),
            quat=np.array([1.0, 0.0, 0.0, 0.0]),
            vel=np.zeros(3),
            omega=np.zeros(3),
            q=np.array(q, dtype=float),
            qd=np.zeros(12),
        )


@dataclass(frozen=True)
class PackedParams:
    scalars: np.ndarray
    legs: np.ndarray
    limits: np.ndarray


# indices into PackedParams.scalars
_MASS, _IXX, _IYY, _IZZ, _G, _K, _C, _MU, _GROUND, _JROT = range(10)


def pack_params(model: RobotModel, contact: ContactParams) -> PackedParams:
    scal = np.array(
        [
            model.mass,
            *model.inertia,
            model.gravity,
            contact.stiffness,
            contact.damping,
            contact.friction,
            contact.ground_height,
            model.joint_inertia,
        ]
    )
    legs = np.array(
        [[g.upper_link_length, g.lower_link_length, g.abduction_axis_offset, *g.hip_offset] for g in model.legs]
    )
    lim = np.tile(np.stack([model.limits.lower, model.limits.upper], axis=1), (4, 1))
    return PackedParams(scal, legs, np.ascontiguousarray(lim))


def rotation_matrix(quat) -> np.ndarray:
    return _rotmat(np.asarray(quat, dtype=float))


def orientation_angles(quat) -> tuple[float, float, float]:
    """(roll, pitch, yaw); yaw is positive toward the robot's right."""
    R = rotation_matrix(quat)
    return _rpy(R)


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _rotmat(qt):
    w, x, y, z = qt[0], qt[1], qt[2], qt[3]
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return R


@numba.njit(cache=True)
def _rpy(R):
    fy = min(1.0, max(-1.0, R[1, 0]))
    ry = min(1.0, max(-1.0, R[1, 2]))
    pitch = math.asin(fy)
    roll = math.asin(-ry)
    yaw = math.atan2(R[2, 0], R[0, 0])
    return roll, pitch, yaw


@numba.njit(cache=True)
def _leg_fk_jac(l1, l2, d, abd, hip, knee, p, J):
    s1, c1 = math.sin(hip), math.cos(hip)
    s12, c12 = math.sin(hip + knee), math.cos(hip + knee)
    ca, sa = math.cos(abd), math.sin(abd)
    px = l1 * s1 + l2 * s12
    py = -l1 * c1 - l2 * c12
    p[0] = px
    p[1] = py * ca - d * sa
    p[2] = py * sa + d * ca
    dpx_dh = l1 * c1 + l2 * c12
    dpx_dk = l2 * c12
    dpy_dh = l1 * s1 + l2 * s12
    dpy_dk = l2 * s12
    J[0, 0] = 0.0
    J[1, 0] = -py * sa - d * ca
    J[2, 0] = py * ca - d * sa
    J[0, 1] = dpx_dh
    J[1, 1] = dpy_dh * ca
    J[2, 1] = dpy_dh * sa
    J[0, 2] = dpx_dk
    J[1, 2] = dpy_dk * ca
    J[2, 2] = dpy_dk * sa


@numba.njit(cache=True)
def _solve3(A, b, out):
    a00, a01, a02 = A[0, 0], A[0, 1], A[0, 2]
    a10, a11, a12 = A[1, 0], A[1, 1], A[1, 2]
    a20, a21, a22 = A[2, 0], A[2, 1], A[2, 2]
    c00 = a11 * a22 - a12 * a21
    c01 = a12 * a20 - a10 * a22
    c02 = a10 * a21 - a11 * a20
    det = a00 * c00 + a01 * c01 + a02 * c02
    inv = 1.0 / det
    out[0] = (c00 * b[0] + (a02 * a21 - a01 * a22) * b[1] + (a01 * a12 - a02 * a11) * b[2]) * inv
    out[1] = (c01 * b[0] + (a00 * a22 - a02 * a20) * b[1] + (a02 * a10 - a00 * a12) * b[2]) * inv
    out[2] = (c02 * b[0] + (a01 * a20 - a00 * a21) * b[1] + (a00 * a11 - a01 * a10) * b[2]) * inv


@numba.njit(cache=True)
def _energy_increment(tau, qd, dt, mode):
    e = 0.0
    for j in range(tau.shape[0]):
        p = tau[j] * qd[j]
        if mode == 0:
            if p > 0.0:
                e += p * dt
        elif mode == 1:
            e += p * dt
        else:
            e += abs(p) * dt
    return e


@numba.njit(cache=True)
def _pd(q, qd, q_des, qd_des, kp, kd, cap, tau):
    for j in range(q.shape[0]):
        t = kp * (q_des[j] - q[j]) + kd * (qd_des[j] - qd[j])
        if t > cap:
            t = cap
        elif t < -cap:
            t = -cap
        tau[j] = t


@numba.njit(cache=True)
def _substep(pos, quat, vel, omega, q, qd, anchor, anchored, force, tau, scal, legs, lim, dt):
    mass = scal[0]
    Ib0, Ib1, Ib2 = scal[1], scal[2], scal[3]
    g = scal[4]
    k, c, mu, ground = scal[5], scal[6], scal[7], scal[8]
    jrot = scal[9]

    R = _rotmat(quat)
    ftot = np.zeros(3)
    ttot = np.zeros(3)
    p = np.empty(3)
    J = np.empty((3, 3))
    rb = np.empty(3)
    vb = np.empty(3)
    A = np.empty((3, 3))
    rhs = np.empty(3)
    dqd = np.empty(3)
    dqd_all = np.empty(12)

    for leg in range(4):
        l1, l2, d = legs[leg, 0], legs[leg, 1], legs[leg, 2]
        j0 = 3 * leg
        _leg_fk_jac(l1, l2, d, q[j0], q[j0 + 1], q[j0 + 2], p, J)
        for i in range(3):
            rb[i] = legs[leg, 3 + i] + p[i]
        # foot velocity in body frame: omega x r + J qd
        vb[0] = omega[1] * rb[2] - omega[2] * rb[1]
        vb[1] = omega[2] * rb[0] - omega[0] * rb[2]
        vb[2] = omega[0] * rb[1] - omega[1] * rb[0]
        for i in range(3):
            vb[i] += J[i, 0] * qd[j0] + J[i, 1] * qd[j0 + 1] + J[i, 2] * qd[j0 + 2]
        pw0 = pos[0] + R[0, 0] * rb[0] + R[0, 1] * rb[1] + R[0, 2] * rb[2]
        pw1 = pos[1] + R[1, 0] * rb[0] + R[1, 1] * rb[1] + R[1, 2] * rb[2]
        pw2 = pos[2] + R[2, 0] * rb[0] + R[2, 1] * rb[1] + R[2, 2] * rb[2]
        vw0 = vel[0] + R[0, 0] * vb[0] + R[0, 1] * vb[1] + R[0, 2] * vb[2]
        vw1 = vel[1] + R[1, 0] * vb[0] + R[1, 1] * vb[1] + R[1, 2] * vb[2]
        vw2 = vel[2] + R[2, 0] * vb[0] + R[2, 1] * vb[1] + R[2, 2] * vb[2]

        pen = ground - pw1
        fx = 0.0
        fy = 0.0
        fz = 0.0
        touching = pen > 0.0
        if touching:
            if anchored[leg] == 0.0:
                anchor[leg, 0] = pw0
                anchor[leg, 1] = ground
                anchor[leg, 2] = pw2
                anchored[leg] = 1.0
            fy = k * pen - c * vw1
            if fy < 0.0:
                fy = 0.0
            fx = -k * (pw0 - anchor[leg, 0]) - c * vw0
            fz = -k * (pw2 - anchor[leg, 2]) - c * vw2
            ft = math.sqrt(fx * fx + fz * fz)
            cap = mu * fy
            if ft > cap:
                s = cap / ft
                fx *= s
                fz *= s
                if k > 0.0:
                    anchor[leg, 0] = pw0 + (fx + c * vw0) / k
                    anchor[leg, 2] = pw2 + (fz + c * vw2) / k
        else:
            anchored[leg] = 0.0
        force[leg, 0] = fx
        force[leg, 1] = fy
        force[leg, 2] = fz

        ftot[0] += fx
        ftot[1] += fy
        ftot[2] += fz
        # moment about the CoM: (R rb) x F
        rw0 = pw0 - pos[0]
        rw1 = pw1 - pos[1]
        rw2 = pw2 - pos[2]
        ttot[0] += rw1 * fz - rw2 * fy
        ttot[1] += rw2 * fx - rw0 * fz
        ttot[2] += rw0 * fy - rw1 * fx

        # ground reaction in the body frame, mapped to joint torques
        fb0 = R[0, 0] * fx + R[1, 0] * fy + R[2, 0] * fz
        fb1 = R[0, 1] * fx + R[1, 1] * fy + R[2, 1] * fz
        fb2 = R[0, 2] * fx + R[1, 2] * fy + R[2, 2] * fz
        for a in range(3):
            rhs[a] = dt * (tau[j0 + a] + J[0, a] * fb0 + J[1, a] * fb1 + J[2, a] * fb2)
            for b in range(3):
                A[a, b] = 0.0
            A[a, a] = jrot
        if touching:
            # contact damping treated implicitly in joint space
            for a in range(3):
                for b in range(3):
                    A[a, b] += dt * c * (J[0, a] * J[0, b] + J[1, a] * J[1, b] + J[2, a] * J[2, b])
        _solve3(A, rhs, dqd)
        for a in range(3):
            dqd_all[j0 + a] = dqd[a]

    # joints
    for j in range(12):
        qd[j] += dqd_all[j]
        q[j] += dt * qd[j]
        if q[j] < lim[j, 0]:
            q[j] = lim[j, 0]
            if qd[j] < 0.0:
                qd[j] = 0.0
        elif q[j] > lim[j, 1]:
            q[j] = lim[j, 1]
            if qd[j] > 0.0:
                qd[j] = 0.0

    # base translation; exact for constant acceleration
    ax = ftot[0] / mass
    ay = ftot[1] / mass - g
    az = ftot[2] / mass
    pos[0] += dt * vel[0] + 0.5 * dt * dt * ax
    pos[1] += dt * vel[1] + 0.5 * dt * dt * ay
    pos[2] += dt * vel[2] + 0.5 * dt * dt * az
    vel[0] += dt * ax
    vel[1] += dt * ay
    vel[2] += dt * az

    # base rotation, body frame
    tb0 = R[0, 0] * ttot[0] + R[1, 0] * ttot[1] + R[2, 0] * ttot[2]
    tb1 = R[0, 1] * ttot[0] + R[1, 1] * ttot[1] + R[2, 1] * ttot[2]
    tb2 = R[0, 2] * ttot[0] + R[1, 2] * ttot[1] + R[2, 2] * ttot[2]
    w0, w1, w2 = omega[0], omega[1], omega[2]
    L0, L1, L2 = Ib0 * w0, Ib1 * w1, Ib2 * w2
    omega[0] += dt * (tb0 - (w1 * L2 - w2 * L1)) / Ib0
    omega[1] += dt * (tb1 - (w2 * L0 - w0 * L2)) / Ib1
    omega[2] += dt * (tb2 - (w0 * L1 - w1 * L0)) / Ib2

    wn = math.sqrt(omega[0] ** 2 + omega[1] ** 2 + omega[2] ** 2)
    if wn > 0.0:
        half = 0.5 * wn * dt
        s = math.sin(half) / wn
        dw, dx, dy, dz = math.cos(half), omega[0] * s, omega[1] * s, omega[2] * s
        qw, qx, qy, qz = quat[0], quat[1], quat[2], quat[3]
        quat[0] = qw * dw - qx * dx - qy * dy - qz * dz
        quat[1] = qw * dx + qx * dw + qy * dz - qz * dy
        quat[2] = qw * dy - qx * dz + qy * dw + qz * dx
        quat[3] = qw * dz + qx * dy - qy * dx + qz * dw
    n = math.sqrt(quat[0] ** 2 + quat[1] ** 2 + quat[2] ** 2 + quat[3] ** 2)
    for i in range(4):
        quat[i] /= n


@numba.njit(cache=True)
def _finite(a):
    for v in a.ravel():
        if not math.isfinite(v):
            return False
    return True


@numba.njit(cache=True)
def _run_half_step(
    pos, quat, vel, omega, q, qd, anchor, anchored, force,
    q_des, qd_des, scal, legs, lim, dt, kp, kd, cap, energy_mode,
    fall_height, fall_tilt, trace,
):
    """Track joint targets for ``q_des.shape[0]`` substeps.

    Returns (energy, fell, diverged). ``trace`` rows hold base position,
    roll/pitch/yaw and joint angles after each substep.
    """
    tau = np.empty(12)
    energy = 0.0
    fell = False
    for k in range(q_des.shape[0]):
        _pd(q, qd, q_des[k], qd_des[k], kp, kd, cap, tau)
        energy += _energy_increment(tau, qd, dt, energy_mode)
        _substep(pos, quat, vel, omega, q, qd, anchor, anchored, force, tau, scal, legs, lim, dt)
        if not (_finite(pos) and _finite(quat) and _finite(vel) and _finite(omega) and _finite(q) and _finite(qd)):
            return energy, fell, True
        R = _rotmat(quat)
        roll, pitch, yaw = _rpy(R)
        trace[k, 0] = pos[0]
        trace[k, 1] = pos[1]
        trace[k, 2] = pos[2]
        trace[k, 3] = roll
        trace[k, 4] = pitch
        trace[k, 5] = yaw
        for j in range(12):
            trace[k, 6 + j] = q[j]
        if pos[1] < fall_height or abs(roll) > fall_tilt or abs(pitch) > fall_tilt:
            fell = True
    return energy, fell, False


# ---------------------------------------------------------------- python API


def energy_mode_code(mode: str) -> int:
    return ENERGY_MODES.index(mode)


def accumulate_energy(tau, qdot, dt: float, mode: str = "positive_work") -> float:
    """Joule increment for one substep: sum_j max(0, tau_j * qdot_j) * dt by default."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau = np.ascontiguousarray(tau, dtype=float)
    qdot = np.ascontiguousarray(qdot, dtype=float)
    return float(_energy_increment(tau, qdot, float(dt), energy_mode_code(mode)))


def pd_torques(model: RobotModel, q, qd, q_des, qd_des) -> np.ndarray:
    tau = np.empty(12)
    _pd(
        np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(qd, dtype=float),
        np.ascontiguousarray(q_des, dtype=float), np.ascontiguousarray(qd_des, dtype=float),
        model.kp, model.kd, model.torque_cap, tau,
    )
    return tau


def physics_substep(
    world: WorldState,
    torques,
    params: PackedParams,
    dt: float,
) -> WorldState:
    """Advance one substep under the given joint torques; returns a new state."""
    if not 0 < dt <= 0.002:
        raise ValueError("dt must lie in (0, 2 ms]")
    w = world.copy()
    tau = np.ascontiguousarray(torques, dtype=float)
    _substep(w.pos, w.quat, w.vel, w.omega, w.q, w.qd, w.anchor, w.anchored,
             w.contact_force, tau, params.scalars, params.legs, params.limits, float(dt))
    for name in ("pos", "quat", "vel", "omega", "q", "qd"):
        if not np.all(np.isfinite(getattr(w, name))):
            raise EpisodeDiverged(f"non-finite {name} after substep")
    return w


def run_half_step(
    world: WorldState,
    q_des: np.ndarray,
    qd_des: np.ndarray,
    model: RobotModel,
    params: PackedParams,
    dt: float,
    energy_mode: str,
    fall_height: float,
    fall_tilt: float,
):
    """Mutates ``world`` in place. Returns (energy, fell, trace)."""
    trace = np.zeros((q_des.shape[0], 18))
    energy, fell, diverged = _run_half_step(
        world.pos, world.quat, world.vel, world.omega, world.q, world.qd,
        world.anchor, world.anchored, world.contact_force,
        np.ascontiguousarray(q_des), np.ascontiguousarray(qd_des),
        params.scalars, params.legs, params.limits, float(dt),
        model.kp, model.kd, model.torque_cap, energy_mode_code(energy_mode),
        float(fall_height), float(fall_tilt), trace,
    )
    if diverged:
        raise EpisodeDiverged("non-finite state during half step")
    return energy, bool(fell), trace


def foot_positions_world(world: WorldState, model: RobotModel) -> np.ndarray:
    R = rotation_matrix(world.quat)
    out = np.empty((4, 3))
    for leg, geom in enumerate(model.legs):
        rb = np.asarray(geom.hip_offset) + forward_kinematics(geom, world.q[3 * leg : 3 * leg + 3])
        out[leg] = world.pos + R @ rb
    return out
