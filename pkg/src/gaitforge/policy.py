"""Linear gait-step policy and its sim-to-real state correction.

The policy maps the 12 motor angles read at a gait-step boundary to the
control-point radii of the next foot loop: ``radii = clip(M @ s)``. On
hardware the measured angles are first pulled into the simulator's state
distribution by an affine map fitted with weighted least squares, giving
``radii = clip(M @ (M_hat @ s + b_bar))``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import STATE_DIM
from .trajectory import ControlPointSet

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RIDGE = 1e-10
CONDITION_WARN = 1e6


class FormatError(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class RankDeficient(np.linalg.LinAlgError):
    pass


def clamp_radii(radii, box: tuple[float, float]) -> np.ndarray:
    return np.clip(np.asarray(radii, dtype=float), box[0], box[1])


def act_unclamped(M: np.ndarray, s) -> np.ndarray:
    return np.asarray(M, dtype=float) @ np.asarray(s, dtype=float)


def act(M: np.ndarray, s, box: tuple[float, float]) -> ControlPointSet:
    return ControlPointSet(clamp_radii(act_unclamped(M, s), box))


@dataclass(frozen=True)
class Sim2RealMap:
    M_hat: np.ndarray
    b_bar: np.ndarray
    residual_rms: np.ndarray | None = None

    def __post_init__(self):
        M_hat = np.asarray(self.M_hat, dtype=float)
        b_bar = np.asarray(self.b_bar, dtype=float).reshape(-1)
        n = b_bar.size
        if M_hat.shape != (n, n):
            raise DimensionMismatch(f"M_hat shape {M_hat.shape} does not match offset length {n}")
        if not (np.all(np.isfinite(M_hat)) and np.all(np.isfinite(b_bar))):
            raise ValueError("sim-to-real map has non-finite entries")
        object.__setattr__(self, "M_hat", M_hat)
        object.__setattr__(self, "b_bar", b_bar)
        cond = self.condition_number
        if cond > CONDITION_WARN:
            log.warning("sim-to-real map is ill-conditioned (cond=%.3g)", cond)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.M_hat))

    @classmethod
    def identity(cls, n: int = STATE_DIM) -> "Sim2RealMap":
        return cls(np.eye(n), np.zeros(n))

    def apply(self, s_real) -> np.ndarray:
        return self.M_hat @ np.asarray(s_real, dtype=float) + self.b_bar


def act_corrected(M: np.ndarray, mapping: Sim2RealMap, s_real, box: tuple[float, float]) -> ControlPointSet:
    return act(M, mapping.apply(s_real), box)


def stance_weights(phi, leg_offset: float = 0.0, stance: float = 3.0, swing: float = 1.0) -> np.ndarray:
    """Per-sample regression weights, heavier while the reference leg is in stance.

    A leg is in stance on the lower half of its loop, ``cos(phi + offset) > 0``.
    """
    a = np.asarray(phi, dtype=float) + leg_offset
    return np.where(np.cos(a) > 0, stance, swing)


def fit_sim2real(sim_states, real_states, weights=None) -> Sim2RealMap:
    """Weighted affine regression from real readings onto simulated angles.

    Minimizes ``sum_k w_k * ||M_hat @ real_k + b_bar - sim_k||^2`` through the
    normal equations with a tiny ridge term.
    """
    sim = np.asarray(sim_states, dtype=float)
    real = np.asarray(real_states, dtype=float)
    if sim.ndim != 2 or sim.shape != real.shape:
        raise DimensionMismatch(f"sim {sim.shape} and real {real.shape} traces must match")
    n, dim = sim.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.size != n:
        raise DimensionMismatch("need one weight per sample")
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    if n < dim + 1:
        raise RankDeficient(f"need at least {dim + 1} samples, got {n}")

    X = np.hstack([real, np.ones((n, 1))])
    Xw = X * np.sqrt(w)[:, None]
    sv = np.linalg.svd(Xw, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise RankDeficient("weighted design matrix is singular (degenerate trace?)")
    G = X.T @ (X * w[:, None])
    G[np.diag_indices_from(G)] += RIDGE
    B = np.linalg.solve(G, X.T @ (sim * w[:, None]))
    M_hat, b_bar = B[:dim].T, B[dim]
    resid = real @ M_hat.T + b_bar - sim
    rms = np.sqrt(np.mean(resid**2, axis=0))
    return Sim2RealMap(M_hat, b_bar, rms)


def weighted_residual(mapping: Sim2RealMap, sim, real, weights) -> float:
    r = np.asarray(real) @ mapping.M_hat.T + mapping.b_bar - np.asarray(sim)
    return float(np.sum(np.asarray(weights)[:, None] * r * r))


def initial_policy(nominal_state, radius: float, n_points: int = 18) -> np.ndarray:
    """Matrix producing a constant-radius loop at the nominal state."""
    s = np.asarray(nominal_state, dtype=float)
    return np.outer(np.full(n_points, radius), s) / float(s @ s)


# ------------------------------------------------------------------ files


@dataclass
class PolicyBundle:
    M: np.ndarray
    box: tuple[float, float]
    gait: str = "forward_trot"
    seed: int = 0
    sim2real: Sim2RealMap | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def action_dim(self) -> int:
        return self.M.shape[0]

    @property
    def state_dim(self) -> int:
        return self.M.shape[1]

    def act(self, s) -> ControlPointSet:
        if self.sim2real is not None:
            return act_corrected(self.M, self.sim2real, s, self.box)
        return act(self.M, s, self.box)


def _flat(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def bundle_to_dict(bundle: PolicyBundle) -> dict:
    out = {
        "version": SCHEMA_VERSION,
        "state_dim": bundle.state_dim,
        "action_dim": bundle.action_dim,
        "M": _flat(bundle.M),
        "M_hat": None,
        "b_bar": None,
        "box": [float(bundle.box[0]), float(bundle.box[1])],
        "gait": bundle.gait,
        "seed": int(bundle.seed),
    }
    if bundle.sim2real is not None:
        out["M_hat"] = _flat(bundle.sim2real.M_hat)
        out["b_bar"] = _flat(bundle.sim2real.b_bar)
    if bundle.metadata:
        out["metadata"] = bundle.metadata
    return out


def save_policy(path, bundle: PolicyBundle) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(bundle), indent=1) + "\n")


def _matrix(doc: dict, key: str, rows: int, cols: int) -> np.ndarray:
    data = doc[key]
    if not isinstance(data, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in data):
        raise FormatError(f"{key} must be a flat list of numbers")
    if len(data) != rows * cols:
        raise DimensionMismatch(f"{key} has {len(data)} entries, expected {rows}x{cols}")
    return np.array(data, dtype=float).reshape(rows, cols)


def bundle_from_dict(doc) -> PolicyBundle:
    if not isinstance(doc, dict):
        raise FormatError("policy file must hold a JSON object")
    missing = {"version", "state_dim", "action_dim", "M", "box", "gait", "seed"} - doc.keys()
    if missing:
        raise FormatError(f"policy file missing keys: {sorted(missing)}")
    if doc["version"] != SCHEMA_VERSION:
        raise FormatError(f"unsupported policy schema version {doc['version']!r}")
    try:
        sd, ad = int(doc["state_dim"]), int(doc["action_dim"])
        box = (float(doc["box"][0]), float(doc["box"][1]))
        seed = int(doc["seed"])
    except (TypeError, ValueError, IndexError, KeyError) as exc:
        raise FormatError(f"bad policy header: {exc}") from exc
    M = _matrix(doc, "M", ad, sd)
    s2r = None
    if doc.get("M_hat") is not None or doc.get("b_bar") is not None:
        if doc.get("M_hat") is None or doc.get("b_bar") is None:
            raise FormatError("M_hat and b_bar must be given together")
        s2r = Sim2RealMap(_matrix(doc, "M_hat", sd, sd), _matrix(doc, "b_bar", 1, sd)[0])
    return PolicyBundle(M, box, str(doc["gait"]), seed, s2r, dict(doc.get("metadata", {})))


def load_policy(path, expected_dims: tuple[int, int] | None = None) -> PolicyBundle:
    """Load a bundle; ``expected_dims`` is (action_dim, state_dim)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    bundle = bundle_from_dict(doc)
    if expected_dims is not None and bundle.M.shape != tuple(expected_dims):
        raise DimensionMismatch(f"policy matrix is {bundle.M.shape}, expected {tuple(expected_dims)}")
    return bundle


def save_sim2real(path, mapping: Sim2RealMap) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "state_dim": mapping.b_bar.size,
        "M_hat": _flat(mapping.M_hat),
        "b_bar": _flat(mapping.b_bar),
        "condition_number": mapping.condition_number,
        "residual_rms": None if mapping.residual_rms is None else _flat(mapping.residual_rms),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_sim2real(path) -> Sim2RealMap:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or not {"M_hat", "b_bar", "state_dim"} <= doc.keys():
        raise FormatError("sim-to-real file needs state_dim, M_hat and b_bar")
    n = int(doc["state_dim"])
    rms = doc.get("residual_rms")
    return Sim2RealMap(
        _matrix(doc, "M_hat", n, n),
        _matrix(doc, "b_bar", 1, n)[0],
        None if rms is None else np.asarray(rms, dtype=float),
    )


TRACE_COLUMNS = (
    ["t_s"] + [f"sim_q{j}" for j in range(STATE_DIM)] + [f"real_q{j}" for j in range(STATE_DIM)] + ["weight"]
)


def load_trace_csv(path):
    """Read (t, sim, real, weight) arrays from a calibration trace."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty trace file") from None
        if [h.strip() for h in header] != TRACE_COLUMNS:
            raise FormatError(f"{path}: expected columns {','.join(TRACE_COLUMNS)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRACE_COLUMNS):
                raise FormatError(f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    data = np.array(rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values in trace")
    return data[:, 0], data[:, 1:13], data[:, 13:25], data[:, 25]


def write_trace_csv(path, t, sim, real, weights) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for k in range(len(t)):
            w.writerow([repr(float(t[k]))] + [repr(float(v)) for v in sim[k]] + [repr(float(v)) for v in real[k]] + [repr(float(weights[k]))])
