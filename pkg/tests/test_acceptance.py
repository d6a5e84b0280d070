"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

from __future__ import annotations

import csv
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gaitforge.ars import (
    ArsConfig,
    QuadraticSurrogate,
    select_top,
    surrogate_config,
    train,
    update,
)
from gaitforge.cli import EXIT_OK, main
from gaitforge.env import EnvFactory, EpisodeReturn, QuadrupedEnv, RobotModel, WorldState, pack_params
from gaitforge.env import pd_torques, physics_substep
from gaitforge.kinematics import KneeBranch, forward_kinematics, solve_ik
from gaitforge.env.model import default_legs
from gaitforge.policy import fit_sim2real, initial_policy, load_policy
from gaitforge.trajectory import (
    MAX_POINTS,
    MIN_POINTS,
    TWO_PI,
    ControlPointSet,
    build_trajectory,
    evaluate,
    segment_derivative,
    segment_value,
)
from test_kinematics import sample_reachable_angles
from test_policy import excitation

TRAIN_ITERS = 40
TRAIN_STEPS = 20
TRAIN_WORKERS = 4
TRAIN_SEED = 7
ROLLOUT_STEPS = 50


@contextmanager
def criterion(number: int, title: str):
    """Record one PASS/FAIL line; the body fills ``detail`` with measured values."""
    detail: dict = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield detail
        ok = True
    finally:
        took = time.perf_counter() - t0
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"{'PASS' if ok else 'FAIL'}  {number}. {title} [{took:.1f} s] {extra}"
        ACCEPTANCE_LINES.append(line)
        print(line)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


# ------------------------------------------------------------------ 1. spline


def test_1_spline_correctness():
    with criterion(1, "spline knot interpolation, C1 continuity, periodicity") as d:
        t0 = time.perf_counter()
        rng = np.random.default_rng(11)
        worst_knot = worst_c1 = 0.0
        closure_exact = True
        for _ in range(1000):
            n = int(rng.integers(MIN_POINTS, MAX_POINTS + 1))
            radii = rng.uniform(0.01, 0.05, n)
            traj = build_trajectory(ControlPointSet(radii), (0.01, 0.05))
            h = TWO_PI / n
            idx = np.arange(n)
            worst_knot = max(worst_knot, float(np.max(np.abs(evaluate(traj, idx * h) - radii))))
            # one-sided derivatives at each knot against the central-difference tangent
            tangent = (np.roll(radii, -1) - np.roll(radii, 1)) / (2 * h)
            left = segment_derivative(traj, (idx - 1) % n, np.ones(n))
            right = segment_derivative(traj, idx, np.zeros(n))
            worst_c1 = max(worst_c1, float(np.max(np.abs(left - right))), float(np.max(np.abs(right - tangent))))
            # the last segment closes onto the first knot bit for bit
            closure_exact &= segment_value(traj, n - 1, 1.0) == radii[0]
            closure_exact &= segment_derivative(traj, n - 1, 1.0) == segment_derivative(traj, 0, 0.0)
            closure_exact &= evaluate(traj, TWO_PI) == evaluate(traj, 0.0)
        took = time.perf_counter() - t0
        d.update(knot_err=f"{worst_knot:.2e}", c1_err=f"{worst_c1:.2e}", closure_exact=bool(closure_exact))
        assert worst_knot <= 1e-12
        assert worst_c1 <= 1e-9
        assert closure_exact
        assert took < 5.0


# ------------------------------------------------------------------ 2. kinematics


def test_2_kinematics_round_trip():
    with criterion(2, "FK/IK round trip over 10,000 points per leg") as d:
        t0 = time.perf_counter()
        worst_pos = worst_ang = 0.0
        for leg, geom in enumerate(default_legs(abduction_offset=0.015)):
            for branch in KneeBranch:
                angles = sample_reachable_angles(geom, 10_000, branch, seed=100 + leg)
                points = forward_kinematics(geom, angles)
                sol, valid = solve_ik(geom, points, branch)
                assert valid.all()
                worst_ang = max(worst_ang, float(np.max(np.abs(sol - angles))))
                worst_pos = max(worst_pos, float(np.max(np.abs(forward_kinematics(geom, sol) - points))))
        took = time.perf_counter() - t0
        d.update(fk_ik_m=f"{worst_pos:.2e}", ik_fk_rad=f"{worst_ang:.2e}")
        assert worst_pos <= 1e-9
        assert worst_ang <= 1e-9
        assert took < 10.0


# ------------------------------------------------------------------ 3. ARS surrogate


def test_3_ars_surrogate_convergence():
    with criterion(3, "ARS on quadratic surrogate, dim 216, 5 seeds") as d:
        t0 = time.perf_counter()
        gaps = []
        for seed in range(5):
            objective = QuadraticSurrogate.random(1000 + seed)
            config = surrogate_config(seed)
            assert config.num_directions_N == 16 and config.top_directions_b == 8 and config.iterations == 200
            theta, _ = train(objective, config, np.zeros((18, 12)), evaluate=False)
            gaps.append(float(np.linalg.norm(theta - objective.theta_star)))
        took = time.perf_counter() - t0
        d.update(final_gaps="/".join(f"{g:.4f}" for g in gaps))
        assert all(g < 1e-2 for g in gaps)
        assert took < 30.0


# ------------------------------------------------------------------ 4. ARS invariances


def test_4_ars_invariances():
    with criterion(4, "ARS affine-shift invariance and worker determinism") as d:
        rng = np.random.default_rng(4)
        theta = rng.normal(size=(18, 12))
        worst = 0.0
        for _ in range(50):
            returns = rng.normal(size=(16, 2)) * rng.uniform(0.1, 10)
            deltas = rng.normal(size=(16, 18, 12))
            scale, shift = rng.uniform(0.1, 10), rng.uniform(-100, 100)
            top = select_top(returns, 8)
            shifted = scale * returns + shift
            assert np.array_equal(select_top(shifted, 8), top)
            a = update(theta, returns[top], deltas[top], 0.02)
            b = update(theta, shifted[top], deltas[top], 0.02)
            worst = max(worst, float(np.max(np.abs(a - b))))
        d["shift_err"] = f"{worst:.2e}"
        assert worst <= 1e-10

        objective = EpisodeReturn(EnvFactory(), steps=4)
        theta0 = initial_policy(QuadrupedEnv().nominal_state(), 0.01)
        results = {}
        for workers in (1, 4, 20):
            config = ArsConfig.desk("forward_trot", iterations=10, seed=3, workers=workers)
            theta_w, records = train(objective, config, theta0)
            results[workers] = (theta_w, [(r.mean_return, r.max_return, r.sigma_R, r.evaluation_return) for r in records])
        ref_theta, ref_rec = results[1]
        identical = all(np.array_equal(t, ref_theta) and rec == ref_rec for t, rec in results.values())
        d["workers_bit_identical"] = identical
        assert identical


# ------------------------------------------------------------------ 5, 8, 9 share trained policies


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    out = {}
    t0 = time.perf_counter()
    for gait in ("forward_trot", "turn"):
        run = root / gait
        args = [
            "train", "--gait", gait, "--iters", str(TRAIN_ITERS), "--steps", str(TRAIN_STEPS),
            "--seed", str(TRAIN_SEED), "--workers", str(TRAIN_WORKERS), "--out", str(run),
        ]
        code = main(args)
        out[gait] = (code, run / "policy.json")
    out["train_seconds"] = time.perf_counter() - t0
    out["root"] = root
    return out


def rollout(policy, gait, out, steps=ROLLOUT_STEPS):
    code = main(["rollout", str(policy), "--gait", gait, "--steps", str(steps), "--out", str(out)])
    return code, read_csv(out / "actions.csv")


def test_5_desk_training(trained):
    with criterion(5, "desk-scale forward-trot and turn training") as d:
        code, path = trained["forward_trot"]
        assert code == EXIT_OK
        bundle = load_policy(path)
        r0, r1 = bundle.metadata["initial_return"], bundle.metadata["final_return"]
        d.update(initial=f"{r0:.3f}", final=f"{r1:.3f}")
        assert r0 > 0 and r1 >= 2 * r0

        code, rows = rollout(path, "forward_trot", trained["root"] / "fwd_rollout")
        cum_x = sum(float(r["delta"]) for r in rows)
        d["cum_x_m"] = f"{cum_x:.3f}"
        assert code == EXIT_OK and len(rows) == ROLLOUT_STEPS
        assert cum_x > 0

        code, path = trained["turn"]
        assert code == EXIT_OK
        code, rows = rollout(path, "turn", trained["root"] / "turn_rollout")
        dyaw = np.array([float(r["delta"]) for r in rows])
        cum_yaw = np.cumsum(dyaw)
        d["cum_yaw_rad"] = f"{cum_yaw[-1]:.3f}"
        assert code == EXIT_OK and len(rows) == ROLLOUT_STEPS
        sign = np.sign(cum_yaw[-1])
        # cumulative yaw moves one way only and never changes sign
        assert sign != 0 and np.all(sign * dyaw > 0) and np.all(sign * cum_yaw > 0)

        d["train_s"] = f"{trained['train_seconds']:.0f}"
        assert trained["train_seconds"] < 15 * 60


# ------------------------------------------------------------------ 6. sim-to-real


def test_6_sim2real_fit():
    with criterion(6, "sim-to-real affine fit, exact and with 0.01 rad noise") as d:
        t0 = time.perf_counter()
        rng = np.random.default_rng(6)
        sim = excitation(n=3000, seed=6)
        A = np.eye(12) + rng.normal(0, 0.05, (12, 12))
        c = rng.normal(0, 0.03, 12)
        # real readings are an affine distortion of the simulated angles
        real = (sim - c) @ np.linalg.inv(A).T
        exact = fit_sim2real(sim, real)
        exact_rms = float(np.max(exact.residual_rms))
        noisy = fit_sim2real(sim + rng.normal(0, 0.01, sim.shape), real)
        noisy_rms = float(np.max(noisy.residual_rms))
        took = time.perf_counter() - t0
        d.update(exact_rms=f"{exact_rms:.2e}", noisy_rms=f"{noisy_rms:.5f}")
        assert exact_rms < 1e-8
        assert noisy_rms <= 0.012
        assert took < 5.0


# ------------------------------------------------------------------ 7. physics


def test_7_physics_sanity():
    with criterion(7, "free fall closed form and static stance load") as d:
        model = RobotModel()
        env = QuadrupedEnv()
        params = pack_params(model, env.config.contact)
        g = model.gravity
        q0 = env.stance_state()
        w = WorldState.at_rest([0.0, 5.0, 0.0], q0)
        w.vel = np.array([0.4, 1.2, -0.3])
        p0, v0 = w.pos.copy(), w.vel.copy()
        for _ in range(100):
            w = physics_substep(w, np.zeros(12), params, 0.001)
        t = 0.1
        expected = p0 + v0 * t + 0.5 * np.array([0.0, -g, 0.0]) * t * t
        fall_err = float(np.max(np.abs(w.pos - expected)))

        w = WorldState.at_rest([0.0, env.nominal_height, 0.0], q0)
        for _ in range(3000):
            w = physics_substep(w, pd_torques(model, w.q, w.qd, q0, np.zeros(12)), params, 0.001)
        load = float(w.contact_force[:, 1].sum())
        rel = abs(load - model.mass * g) / (model.mass * g)
        d.update(fall_err_m=f"{fall_err:.2e}", stance_rel_err=f"{rel:.2e}")
        assert fall_err <= 1e-6
        assert rel <= 0.01


# ------------------------------------------------------------------ 8. transition


def test_8_transition_continuity(trained):
    with criterion(8, "transition forward_trot -> turn, alpha 0.3") as d:
        code, path = trained["forward_trot"]
        assert code == EXIT_OK
        out = trained["root"] / "transition"
        switch = 5
        code = main([
            "transition", str(path), "--from", "forward_trot", "--to", "turn",
            "--alpha", "0.3", "--steps", str(switch + 21), "--switch-step", str(switch), "--out", str(out),
        ])
        assert code == EXIT_OK
        gaps = np.array([float(r["gap_m"]) for r in read_csv(out / "blend.csv")])[switch:]
        below = np.flatnonzero(gaps < 1e-3)
        first = int(below[0]) if below.size else None
        d.update(first_gap=f"{gaps[0]:.4f}", steps_to_1mm=first, last_gap=f"{gaps[-1]:.1e}")
        # strictly shrinking until it reaches zero, then it stays there
        positive = gaps[gaps > 0]
        assert np.all(np.diff(positive) < 0)
        assert np.all(gaps[len(positive):] == 0)
        assert first is not None and first <= 20


# ------------------------------------------------------------------ 9. limit cycle


def test_9_limit_cycle(trained):
    with criterion(9, "trained forward-trot actions settle onto a limit cycle") as d:
        code, path = trained["forward_trot"]
        assert code == EXIT_OK
        bundle = load_policy(path)
        code, rows = rollout(path, "forward_trot", trained["root"] / "limit_rollout")
        assert code == EXIT_OK and len(rows) == ROLLOUT_STEPS
        actions = np.array([[float(r[f"r{i}"]) for i in range(bundle.action_dim)] for r in rows])
        lo, hi = bundle.box
        threshold = 0.05 * (hi - lo) * math.sqrt(bundle.action_dim)
        diffs = np.linalg.norm(np.diff(actions, axis=0), axis=1)
        above = np.flatnonzero(diffs >= threshold)
        settle = int(above[-1]) + 1 if above.size else 0
        d.update(settle_step=settle, max_tail_diff=f"{np.max(diffs[min(settle, len(diffs) - 1):]):.2e}",
                 threshold=f"{threshold:.4f}")
        assert settle <= 10
