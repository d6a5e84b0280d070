from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaitforge.policy import (
    TRACE_COLUMNS,
    DimensionMismatch,
    FormatError,
    PolicyBundle,
    RankDeficient,
    Sim2RealMap,
    act,
    act_corrected,
    act_unclamped,
    clamp_radii,
    fit_sim2real,
    initial_policy,
    load_policy,
    load_sim2real,
    load_trace_csv,
    save_policy,
    save_sim2real,
    stance_weights,
    weighted_residual,
    write_trace_csv,
)

BOX = (0.01, 0.05)
finite = st.floats(-3, 3)


def matvec(M, s):
    out = []
    for i in range(len(M)):
        acc = 0.0
        for j in range(len(s)):
            acc += M[i][j] * s[j]
        out.append(acc)
    return np.array(out)


def excitation(n=600, seed=0, dim=12):
    """Gait-like joint traces: per-joint sinusoids plus a little broadband noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 3000.0
    freq = rng.uniform(2, 9, dim)
    phase = rng.uniform(0, 2 * np.pi, dim)
    return 0.4 * np.sin(2 * np.pi * freq * t[:, None] + phase) + 0.05 * rng.standard_normal((n, dim))


def test_zero_matrix_and_zero_state_give_lower_bound():
    s = np.random.default_rng(0).normal(size=12)
    assert np.all(act(np.zeros((18, 12)), s, BOX).radii == BOX[0])
    assert np.all(act(np.ones((18, 12)), np.zeros(12), BOX).radii == BOX[0])


def test_unclamped_matches_naive_matvec():
    rng = np.random.default_rng(1)
    for _ in range(20):
        M, s = rng.normal(size=(18, 12)), rng.normal(size=12)
        np.testing.assert_allclose(act_unclamped(M, s), matvec(M, s), atol=1e-12)


@given(arrays(float, (18, 12), elements=finite), arrays(float, 12, elements=finite),
       arrays(float, 12, elements=finite), finite, finite)
def test_linearity_before_clamp(M, s1, s2, a, b):
    lhs = act_unclamped(M, a * s1 + b * s2)
    rhs = a * act_unclamped(M, s1) + b * act_unclamped(M, s2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@given(arrays(float, 18, elements=st.floats(-1, 1)))
def test_clamp_idempotent(r):
    once = clamp_radii(r, BOX)
    assert np.array_equal(clamp_radii(once, BOX), once)
    assert np.all((once >= BOX[0]) & (once <= BOX[1]))


def test_act_corrected_identity_and_offset():
    rng = np.random.default_rng(2)
    M, s, delta = rng.normal(0, 0.01, (18, 12)), rng.normal(size=12), rng.normal(size=12)
    assert np.array_equal(act_corrected(M, Sim2RealMap.identity(), s, BOX).radii, act(M, s, BOX).radii)
    shifted = Sim2RealMap(np.eye(12), delta)
    np.testing.assert_allclose(act_corrected(M, shifted, s, BOX).radii, act(M, s + delta, BOX).radii, atol=1e-15)


def test_act_corrected_composition():
    rng = np.random.default_rng(3)
    for _ in range(10):
        M, s = rng.normal(0, 0.01, (18, 12)), rng.normal(size=12)
        Mh, b = np.eye(12) + rng.normal(0, 0.1, (12, 12)), rng.normal(0, 0.1, 12)
        expected = np.clip(matvec(M, matvec(Mh, s) + b), *BOX)
        np.testing.assert_allclose(act_corrected(M, Sim2RealMap(Mh, b), s, BOX).radii, expected, atol=1e-12)


def test_fit_identity():
    sim = excitation()
    m = fit_sim2real(sim, sim)
    np.testing.assert_allclose(m.M_hat, np.eye(12), atol=1e-8)
    np.testing.assert_allclose(m.b_bar, 0.0, atol=1e-8)


def test_fit_recovers_affine_map():
    rng = np.random.default_rng(4)
    sim = excitation(seed=4)
    A = np.eye(12) + rng.normal(0, 0.1, (12, 12))
    c = rng.normal(0, 0.05, 12)
    real = sim @ A.T + c
    m = fit_sim2real(sim, real, stance_weights(np.arange(len(sim)) * 0.01))
    assert np.max(m.residual_rms) < 1e-8
    np.testing.assert_allclose(m.M_hat, np.linalg.inv(A), atol=1e-7)


def test_fit_with_noise():
    rng = np.random.default_rng(5)
    sim = excitation(n=15000, seed=5)
    real = sim @ (np.eye(12) + rng.normal(0, 0.05, (12, 12))).T + 0.02
    noisy_sim = sim + rng.normal(0, 0.01, sim.shape)
    m = fit_sim2real(noisy_sim, real)
    assert np.max(m.residual_rms) <= 0.012
    assert np.min(m.residual_rms) > 0.008


def test_rank_deficient_inputs():
    const = np.tile(np.linspace(0, 1, 12), (100, 1))
    with pytest.raises(RankDeficient):
        fit_sim2real(const, const)
    with pytest.raises(RankDeficient):
        fit_sim2real(excitation(n=10), excitation(n=10))


def test_weights_validation():
    sim = excitation(n=50)
    with pytest.raises(ValueError):
        fit_sim2real(sim, sim, -np.ones(50))
    with pytest.raises(DimensionMismatch):
        fit_sim2real(sim, sim, np.ones(49))


def test_fit_is_weighted_optimum():
    rng = np.random.default_rng(6)
    sim = excitation(seed=6)
    real = sim + rng.normal(0, 0.02, sim.shape)
    w = stance_weights(np.arange(len(sim)) * 0.02)
    m = fit_sim2real(sim, real, w)
    base = weighted_residual(m, sim, real, w)
    for _ in range(50):
        dM = rng.normal(size=(12, 12))
        db = rng.normal(size=12)
        scale = 1e-4 / np.sqrt(np.sum(dM**2) + np.sum(db**2))
        moved = Sim2RealMap(m.M_hat + scale * dM, m.b_bar + scale * db)
        assert weighted_residual(moved, sim, real, w) >= base


def test_weights_select_exact_subset():
    rng = np.random.default_rng(7)
    sim = excitation(seed=7)
    A = np.eye(12) + rng.normal(0, 0.1, (12, 12))
    real = sim @ A.T + 0.1
    w = np.zeros(len(sim))
    w[:200] = 1.0
    real[200:] += rng.normal(0, 0.3, real[200:].shape)  # corrupted, zero weight
    m = fit_sim2real(sim, real, w)
    np.testing.assert_allclose(real[:200] @ m.M_hat.T + m.b_bar, sim[:200], atol=1e-8)


def test_stance_weights():
    w = stance_weights(np.array([0.0, np.pi]))
    assert list(w) == [3.0, 1.0]


def test_initial_policy_constant_radius():
    s = np.random.default_rng(8).normal(size=12)
    np.testing.assert_allclose(act_unclamped(initial_policy(s, 0.02), s), 0.02, atol=1e-15)


def _bundle(with_map=True):
    rng = np.random.default_rng(9)
    m = Sim2RealMap(np.eye(12) + rng.normal(0, 0.1, (12, 12)), rng.normal(size=12)) if with_map else None
    return PolicyBundle(rng.normal(size=(18, 12)), BOX, "turn", 2**63 + 5, m, {"note": "x"})


@pytest.mark.parametrize("with_map", [True, False])
def test_policy_round_trip(tmp_path, with_map):
    b = _bundle(with_map)
    save_policy(tmp_path / "p.json", b)
    got = load_policy(tmp_path / "p.json", (18, 12))
    assert np.array_equal(got.M, b.M)
    assert got.box == b.box and got.gait == "turn" and got.seed == b.seed and got.metadata == {"note": "x"}
    if with_map:
        assert np.array_equal(got.sim2real.M_hat, b.sim2real.M_hat)
        assert np.array_equal(got.sim2real.b_bar, b.sim2real.b_bar)
    else:
        assert got.sim2real is None


def test_policy_schema(tmp_path):
    save_policy(tmp_path / "p.json", _bundle())
    doc = json.loads((tmp_path / "p.json").read_text())
    assert {"version", "state_dim", "action_dim", "M", "M_hat", "b_bar", "box", "gait", "seed"} <= doc.keys()
    assert len(doc["M"]) == 18 * 12


def test_truncated_policy_file(tmp_path):
    save_policy(tmp_path / "p.json", _bundle())
    text = (tmp_path / "p.json").read_text()
    (tmp_path / "p.json").write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_policy(tmp_path / "p.json")


def test_wrong_shape_policy(tmp_path):
    b = _bundle(False)
    b.M = b.M[:17]
    save_policy(tmp_path / "p.json", b)
    with pytest.raises(DimensionMismatch):
        load_policy(tmp_path / "p.json", (18, 12))
    doc = json.loads((tmp_path / "p.json").read_text())
    doc["action_dim"] = 18
    (tmp_path / "p.json").write_text(json.dumps(doc))
    with pytest.raises(DimensionMismatch):
        load_policy(tmp_path / "p.json")


def test_sim2real_file_round_trip(tmp_path):
    m = fit_sim2real(excitation(), excitation() + 0.1)
    save_sim2real(tmp_path / "m.json", m)
    got = load_sim2real(tmp_path / "m.json")
    assert np.array_equal(got.M_hat, m.M_hat) and np.array_equal(got.b_bar, m.b_bar)


def test_ill_conditioned_map_warns(caplog):
    Mh = np.eye(12)
    Mh[0, 0] = 1e-8
    with caplog.at_level("WARNING"):
        Sim2RealMap(Mh, np.zeros(12))
    assert "ill-conditioned" in caplog.text


def test_trace_csv_round_trip(tmp_path):
    sim = excitation(n=20)
    real = sim + 0.01
    t = np.arange(20) / 3000
    w = np.ones(20)
    write_trace_csv(tmp_path / "t.csv", t, sim, real, w)
    t2, s2, r2, w2 = load_trace_csv(tmp_path / "t.csv")
    assert np.array_equal(s2, sim) and np.array_equal(r2, real) and np.array_equal(t2, t)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)


def test_trace_csv_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        load_trace_csv(tmp_path / "bad.csv")
    (tmp_path / "short.csv").write_text(",".join(TRACE_COLUMNS) + "\n1,2\n")
    with pytest.raises(FormatError):
        load_trace_csv(tmp_path / "short.csv")
