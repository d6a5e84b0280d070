from __future__ import annotations

import pytest

from gaitforge.config import ConfigError, RunConfig, load_config, parse_config

GOOD = """\
seed: 7
out: runs/x
gait: turn
robot: {mass: 4.5, kp: 25.0}
env:
  episode_steps: 12
  friction: 0.9
  w_vel: 40
trajectory: {radius_max: 0.045}
ars: {iterations: 5, workers: 2, N: 8, b: 4}
"""


def test_parse_good_config():
    run = parse_config(GOOD)
    assert run.seed == 7 and run.primary_gait == "turn"
    assert run.robot_model().mass == 4.5
    env = run.env_config()
    assert env.episode_steps == 12 and env.contact.friction == 0.9 and env.reward.w_vel == 40
    cfg = run.ars_config()
    assert (cfg.num_directions_N, cfg.top_directions_b, cfg.iterations, cfg.workers, cfg.seed) == (8, 4, 5, 2, 7)
    # desk-scale turn preset
    assert cfg.noise_nu == pytest.approx(0.005)
    assert run.trajectory_config().radius_max == 0.045


def test_defaults():
    run = parse_config("")
    assert run == RunConfig().validate()
    assert run.ars_config().step_size_beta == pytest.approx(0.009)


@pytest.mark.parametrize(
    "text, line",
    [
        ("seed: 1\nbogus: 2\n", 2),
        ("seed: 1\nenv:\n  episode_steps: 3\n  stifness: 10\n", 4),
        ("gaits:\n  forward_trot: 1\n  gallop: 2\n", 3),
        ("seed: 1\nenv: [1, 2]\n", 2),
        ("seed: 1\nars: {N: 4\n", 3),
    ],
)
def test_errors_are_line_anchored(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config(text, "cfg.yaml")


@pytest.mark.parametrize(
    "text",
    [
        "seed: 1.5\n",
        "ars: {b: 20}\n",
        "env: {dt: 0.01}\n",
        "gait: gallop\n",
        "gait: turn\ngaits: {turn: 1}\n",
        "gait_override: {yaws: [0, 0, 0]}\n",
    ],
)
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_multi_gait_and_overrides():
    run = parse_config("gaits: {forward_trot: 1.0, turn: 0.5}\ngait_override: {offsets: [0, 0, 0, 0], reward_axis: '+z'}\n")
    spec = run.multi_gait()
    assert [(g.name, w) for g, w in spec.entries] == [("forward_trot", 1.0), ("turn", 0.5)]
    assert all(g.phase_offsets == (0, 0, 0, 0) and g.reward_axis == "+z" for g, _ in spec.entries)
    yawed = parse_config("gait: turn\ngait_override: {yaws: [0.1, -0.1, -0.2, 0.2]}\n").gait()
    assert [p.yaw for p in yawed.leg_planes] == [0.1, -0.1, -0.2, 0.2]
    assert [p.direction for p in yawed.leg_planes] == [1, -1, 1, -1]


def test_digest_is_stable(tmp_path):
    (tmp_path / "c.yaml").write_text(GOOD)
    a, b = load_config(tmp_path / "c.yaml"), parse_config(GOOD)
    assert a.digest() == b.digest()
    assert a.digest() != parse_config(GOOD.replace("seed: 7", "seed: 8")).digest()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.yaml")
