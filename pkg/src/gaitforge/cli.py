"""``gaitforge`` command line: train, rollout, fit-sim2real, export-trajectory, transition.

Exit codes: 0 ok, 2 config or input error, 3 training aborted, 4 robot fell,
5 rank-deficient calibration data. Log level comes from GAITFORGE_LOG.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .ars import TrainingAborted, evaluate_policy, train, write_learning_curve
from .config import ConfigError, RunConfig, from_dict, load_config
from .env import EpisodeDiverged, EpisodeReturn, QuadrupedEnv, orientation_angles
from .gaits import GAIT_NAMES, MultiGaitObjective, UnknownGait
from .kinematics import LEG_NAMES, STATE_DIM
from .policy import (
    DimensionMismatch,
    FormatError,
    PolicyBundle,
    RankDeficient,
    Sim2RealMap,
    act,
    act_corrected,
    fit_sim2real,
    initial_policy,
    load_policy,
    load_sim2real,
    load_trace_csv,
    save_policy,
    save_sim2real,
)
from .trajectory import BlendState, ControlPointSet, blend_gaits, build_trajectory, export_csv, foot_target

log = logging.getLogger("gaitforge")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_FALL, EXIT_RANK = 0, 2, 3, 4, 5
INPUT_ERRORS = (ConfigError, UnknownGait, FormatError, DimensionMismatch, ValueError, OSError)

TRACE_HEAD = ["step", "substep", "t_s", "phase_rad", "x_m", "y_m", "z_m", "roll_rad", "pitch_rad", "yaw_rad"]
TRACE_HEAD += [f"q{j}" for j in range(STATE_DIM)] + ["step_end"]
BLEND_HEAD = [f"heading_{n}" for n in LEG_NAMES] + [f"offset_{n}" for n in LEG_NAMES]
GAP_PHASES = 36


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _fmt(v) -> str:
    return repr(float(v))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, argv, run: RunConfig | None, outputs) -> None:
    import numba

    doc = {
        "command": command,
        "argv": list(argv),
        "seed": None if run is None else run.seed,
        "config_sha256": None if run is None else run.digest(),
        "versions": {
            "gaitforge": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    if run is not None:
        (out / "run_config.json").write_text(json.dumps(run.to_dict(), indent=1, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> RunConfig:
    run = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "gait", None):
        changes["gaits"] = ((args.gait, 1.0),)
    if getattr(args, "out", None):
        changes["out"] = args.out
    ars = dict(run.ars)
    if getattr(args, "iters", None) is not None:
        ars["iterations"] = args.iters
    if getattr(args, "workers", None) is not None:
        ars["workers"] = args.workers
    env = dict(run.env)
    if getattr(args, "steps", None) is not None and args.command == "train":
        env["episode_steps"] = args.steps
    return from_dict({**run.to_dict(), **changes_to_doc(changes), "ars": ars, "env": env})


def changes_to_doc(changes: dict) -> dict:
    doc = dict(changes)
    if "gaits" in doc:
        doc["gaits"] = {g: w for g, w in doc["gaits"]}
    return doc


def _policy_run(bundle: PolicyBundle, args) -> RunConfig:
    """Environment settings a policy was trained under, unless --config overrides."""
    if getattr(args, "config", None):
        return load_config(args.config)
    doc = bundle.metadata.get("run_config")
    return from_dict(doc) if doc else RunConfig()


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    run = _run_config(args)
    out = _out_dir(run.out)
    cfg = run.ars_config()
    factory = run.factory()
    if len(run.gaits) > 1:
        objective = MultiGaitObjective(run.multi_gait(), factory)
    else:
        objective = EpisodeReturn(factory)
    env = factory()
    theta0 = initial_policy(env.nominal_state(), run.initial_radius, env.trajectory.n_points)
    box = env.trajectory.radius_bounds
    r0 = evaluate_policy(objective, theta0, cfg)
    log.info("initial policy return %.4f", r0)

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    checkpoints = []

    def bundle(theta, extra=None) -> PolicyBundle:
        meta = {"run_config": run.to_dict(), "initial_return": r0}
        meta.update(extra or {})
        return PolicyBundle(np.asarray(theta), box, run.primary_gait, run.seed, None, meta)

    def on_iteration(rec, theta):
        if (rec.iteration + 1) % run.checkpoint_every == 0:
            path = ckpt_dir / f"policy_iter{rec.iteration + 1:04d}.json"
            save_policy(path, bundle(theta, {"iteration": rec.iteration + 1}))
            checkpoints.append(path)

    curve = out / "learning_curve.csv"
    try:
        theta, records = train(objective, cfg, theta0, on_iteration)
    except TrainingAborted as exc:
        write_learning_curve(curve, exc.records)
        if exc.theta is not None:
            save_policy(out / "policy_aborted.json", bundle(exc.theta, {"aborted": True}))
        log.error("training aborted: %s", exc)
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    write_learning_curve(curve, records)
    policy_path = out / "policy.json"
    final = records[-1].evaluation_return if records else r0
    save_policy(policy_path, bundle(theta, {"final_return": final}))
    write_manifest(out, "train", args.argv, run, [policy_path, curve, *checkpoints])
    print(f"initial return {r0:.4f}  final return {final:.4f}  -> {policy_path}")
    return EXIT_OK


# ------------------------------------------------------------------ rollouts


def _actions_for(bundle: PolicyBundle, mapping: Sim2RealMap | None):
    if mapping is not None:
        return lambda s: act_corrected(bundle.M, mapping, s, bundle.box)
    return lambda s: act(bundle.M, s, bundle.box)


def _trace_rows(step: int, info) -> list[list]:
    rows = []
    tr = info["trace"]
    n = len(tr)
    for k in range(n):
        row = [step, k, _fmt(info["times"][k]), _fmt(info["phases"][k] % (2 * math.pi))]
        row += [_fmt(v) for v in tr[k]]
        row.append(1 if k == n - 1 else 0)
        rows.append(row)
    return rows


def _action_row(step: int, a: ControlPointSet, reward: float, info, env, fell: bool) -> list:
    yaw = orientation_angles(env.world.quat)[2]
    pos = env.world.pos
    return (
        [step]
        + [_fmt(v) for v in a.radii]
        + [_fmt(reward), _fmt(info["delta"]), _fmt(info["energy"]), _fmt(pos[0]), _fmt(pos[2]), _fmt(yaw), int(fell)]
    )


def _action_head(n: int) -> list[str]:
    return ["step"] + [f"r{i}" for i in range(n)] + ["reward", "delta", "energy", "x_m", "z_m", "yaw_rad", "fell"]


def _load_bundle(args):
    bundle = load_policy(args.policy)
    mapping = load_sim2real(args.sim2real) if getattr(args, "sim2real", None) else None
    return bundle, mapping


def cmd_rollout(args) -> int:
    bundle, mapping = _load_bundle(args)
    run = _policy_run(bundle, args)
    gait = run.gait(args.gait or bundle.gait)
    out = _out_dir(args.out or Path(run.out) / "rollout")
    factory = replace(run.factory(), gait=gait)
    policy = _actions_for(bundle, mapping)
    env = factory()
    s = env.reset(seed=args.seed)
    fell = False
    trace_path, act_path = out / "trace.csv", out / "actions.csv"
    with trace_path.open("w", newline="") as tf, act_path.open("w", newline="") as af:
        tw, aw = _writer(tf), _writer(af)
        tw.writerow(TRACE_HEAD)
        aw.writerow(_action_head(bundle.action_dim))
        for k in range(args.steps):
            a = policy(s)
            try:
                s, r, fell, info = env.step_gait(a)
            except EpisodeDiverged as exc:
                log.error("step %d: %s", k, exc)
                fell = True
                break
            tw.writerows(_trace_rows(k, info))
            aw.writerow(_action_row(k, a, r, info, env, fell))
            if fell:
                log.warning("robot fell during gait step %d", k)
                break
    write_manifest(out, "rollout", args.argv, run, [trace_path, act_path])
    if fell:
        print(f"robot fell; partial trace in {trace_path}", file=sys.stderr)
        return EXIT_FALL
    return EXIT_OK


def matched_phase_gap(env: QuadrupedEnv, prev, cur, n_phases: int = GAP_PHASES) -> float:
    """Largest foot-target change between two gaits on a fixed reference loop."""
    traj = build_trajectory(env.mid_radius_points(), env.trajectory.radius_bounds)
    phis = np.arange(n_phases) * (2 * math.pi / n_phases)
    gap = 0.0
    for leg, geom in enumerate(env.model.legs):
        a = foot_target(traj, phis, prev.phase_offsets[leg], prev.leg_planes[leg], env.trajectory, geom)
        b = foot_target(traj, phis, cur.phase_offsets[leg], cur.leg_planes[leg], env.trajectory, geom)
        gap = max(gap, float(np.max(np.linalg.norm(a - b, axis=-1))))
    return gap


def cmd_transition(args) -> int:
    bundle, mapping = _load_bundle(args)
    run = _policy_run(bundle, args)
    src, dst = run.gait(args.from_gait), run.gait(args.to_gait)
    if not 0 < args.alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    out = _out_dir(args.out or Path(run.out) / "transition")
    env = replace(run.factory(), gait=src)()
    policy = _actions_for(bundle, mapping)
    s = env.reset(seed=args.seed)
    goal = BlendState.from_gait(dst)
    state = BlendState.from_gait(src)
    current = src
    fell = False
    paths = [out / "trace.csv", out / "actions.csv", out / "blend.csv"]
    with paths[0].open("w", newline="") as tf, paths[1].open("w", newline="") as af, paths[2].open(
        "w", newline=""
    ) as bf:
        tw, aw, bw = _writer(tf), _writer(af), _writer(bf)
        tw.writerow(TRACE_HEAD + BLEND_HEAD)
        aw.writerow(_action_head(bundle.action_dim))
        bw.writerow(["step", "blending"] + BLEND_HEAD + ["gap_m"])
        for k in range(args.steps):
            prev = current
            blending = k >= args.switch_step
            if blending:
                state = blend_gaits(src, dst, args.alpha, state)
                # once the filter has settled, run the target gait itself
                current = dst if state == goal else state.as_gait(dst)
            gap = matched_phase_gap(env, prev, current) if k > 0 else 0.0
            params = [_fmt(h) for h in state.headings] + [_fmt(o) for o in state.offsets]
            bw.writerow([k, int(blending)] + params + [_fmt(gap)])
            a = policy(s)
            try:
                s, r, fell, info = env.step_gait(a, current)
            except EpisodeDiverged as exc:
                log.error("step %d: %s", k, exc)
                fell = True
                break
            tw.writerows(row + params for row in _trace_rows(k, info))
            aw.writerow(_action_row(k, a, r, info, env, fell))
            if fell:
                break
    write_manifest(out, "transition", args.argv, run, paths)
    if fell:
        print(f"robot fell; partial trace in {paths[0]}", file=sys.stderr)
        return EXIT_FALL
    return EXIT_OK


# ------------------------------------------------------------------ calibration / export


def cmd_fit_sim2real(args) -> int:
    _, sim, real, weights = load_trace_csv(args.trace)
    try:
        mapping = fit_sim2real(sim, real, weights)
    except RankDeficient as exc:
        print(f"rank-deficient calibration data: {exc}", file=sys.stderr)
        return EXIT_RANK
    out = _out_dir(args.out or "sim2real")
    map_path, report_path = out / "sim2real.json", out / "residual_report.csv"
    save_sim2real(map_path, mapping)
    with report_path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["joint", "rms_rad"])
        for j, v in enumerate(mapping.residual_rms):
            w.writerow([j, _fmt(v)])
    write_manifest(out, "fit-sim2real", args.argv, None, [map_path, report_path])
    rms = mapping.residual_rms
    print(f"residual RMS per joint (rad): max {float(np.max(rms)):.3e}, mean {float(np.mean(rms)):.3e}")
    return EXIT_OK


def _parse_state(text: str | None, env: QuadrupedEnv) -> np.ndarray:
    if text is None:
        return env.nominal_state()
    try:
        s = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ValueError(f"--state must be {STATE_DIM} comma-separated numbers") from None
    if s.size != STATE_DIM or not np.all(np.isfinite(s)):
        raise ValueError(f"--state must be {STATE_DIM} finite comma-separated numbers")
    return s


def cmd_export_trajectory(args) -> int:
    bundle, mapping = _load_bundle(args)
    run = _policy_run(bundle, args)
    gait = run.gait(args.gait or bundle.gait)
    if args.resolution < 1:
        raise ValueError("--resolution must be positive")
    env = replace(run.factory(), gait=gait)()
    s = _parse_state(args.state, env)
    a = _actions_for(bundle, mapping)(s)
    traj = build_trajectory(a, bundle.box)
    out = _out_dir(args.out or Path(run.out) / "trajectory")
    paths = []
    for leg, geom in enumerate(env.model.legs):
        path = out / f"trajectory_{LEG_NAMES[leg]}.csv"
        export_csv(path, traj, gait.leg_planes[leg], gait.phase_offsets[leg], env.trajectory, geom, args.resolution)
        paths.append(path)
    write_manifest(out, "export-trajectory", args.argv, run, paths)
    return EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a linear gait policy with ARS")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--gait", choices=GAIT_NAMES)
    t.add_argument("--iters", type=int)
    t.add_argument("--steps", type=int, help="gait steps per training episode")
    t.add_argument("--workers", type=int)
    t.add_argument("--out")

    def policy_cmd(name, help_):
        c = sub.add_parser(name, help=help_)
        c.add_argument("policy")
        c.add_argument("--config", help="environment settings (default: those stored with the policy)")
        c.add_argument("--sim2real", help="affine state map applied before the policy")
        c.add_argument("--seed", type=int, default=0, help="initial-state noise seed")
        c.add_argument("--out")
        return c

    r = policy_cmd("rollout", "run a policy and record its trace")
    r.add_argument("--gait", choices=GAIT_NAMES)
    r.add_argument("--steps", type=int, default=50)

    x = policy_cmd("export-trajectory", "write per-leg foot loops as CSV")
    x.add_argument("--gait", choices=GAIT_NAMES)
    x.add_argument("--state", help="12 comma-separated joint angles (default: nominal stance)")
    x.add_argument("--resolution", type=int, default=360)

    tr = policy_cmd("transition", "switch gaits mid-run through the blend filter")
    tr.add_argument("--from", dest="from_gait", required=True, choices=GAIT_NAMES)
    tr.add_argument("--to", dest="to_gait", required=True, choices=GAIT_NAMES)
    tr.add_argument("--alpha", type=float, default=0.3)
    tr.add_argument("--steps", type=int, default=30)
    tr.add_argument("--switch-step", type=int, default=5)

    f = sub.add_parser("fit-sim2real", help="fit the affine sim-to-real state map")
    f.add_argument("trace")
    f.add_argument("--out")
    return p


COMMANDS = {
    "train": cmd_train,
    "rollout": cmd_rollout,
    "fit-sim2real": cmd_fit_sim2real,
    "export-trajectory": cmd_export_trajectory,
    "transition": cmd_transition,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("GAITFORGE_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.argv = argv
    if getattr(args, "steps", None) is not None and args.steps < 0:
        print("error: --steps must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
