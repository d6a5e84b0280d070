"""Augmented Random Search, V-1t (top-b directions, no state normalization).

The objective is any picklable callable ``(theta, env_seed) -> float``; for
locomotion that is :class:`gaitforge.env.EpisodeReturn`. All randomness is
derived from ``SeedSequence([seed, iteration, index])`` so the result does not
depend on how rollouts are scheduled across workers.
"""

from __future__ import annotations

import csv
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)

POLICY_SHAPE = (18, 12)
SIGMA_EPS = 1e-12
MAX_DEGENERATE = 3
EVAL_INDEX = 2**32 - 1  # stream index reserved for the unperturbed evaluation
CURVE_COLUMNS = ("iteration", "mean_return", "max_return", "sigma_R", "eval_return", "wall_s")

# (beta, nu) per gait at full scale
GAIT_PRESETS = {
    "forward_trot": (0.09, 0.03),
    "backward_trot": (0.1, 0.03),
    "side_step": (0.1, 0.03),
    "turn": (0.1, 0.05),
}
# The desk-scale radius box is about a tenth as wide as the full-scale one, so
# beta and nu shrink by the same factor to keep perturbations inside the box.
DESK_SCALE = 0.1


class DegenerateSigma(ArithmeticError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, records=(), theta=None):
        super().__init__(message)
        self.records = list(records)
        self.theta = theta


@dataclass(frozen=True)
class ArsConfig:
    step_size_beta: float = 0.09
    noise_nu: float = 0.03
    num_directions_N: int = 16
    top_directions_b: int = 8
    iterations: int = 40
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not (self.step_size_beta > 0 and self.noise_nu > 0):
            raise ValueError("beta and nu must be positive")
        if self.num_directions_N < 1 or self.iterations < 1 or self.workers < 1:
            raise ValueError("N, iterations and workers must be positive")
        if not 1 <= self.top_directions_b <= self.num_directions_N:
            raise ValueError(f"b must lie in [1, N], got b={self.top_directions_b}, N={self.num_directions_N}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def for_gait(cls, gait: str, scale: float = 1.0, **overrides) -> "ArsConfig":
        beta, nu = GAIT_PRESETS[gait]
        return cls(step_size_beta=beta * scale, noise_nu=nu * scale, **overrides)

    @classmethod
    def desk(cls, gait: str, **overrides) -> "ArsConfig":
        return cls.for_gait(gait, DESK_SCALE, **overrides)

    @classmethod
    def full_scale(cls, gait: str, **overrides) -> "ArsConfig":
        # one direction per policy parameter, half of them kept
        n = POLICY_SHAPE[0] * POLICY_SHAPE[1]
        return cls.for_gait(gait, num_directions_N=n, top_directions_b=n // 2, **overrides)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mean_return: float
    max_return: float
    sigma_R: float
    evaluation_return: float
    wall_s: float = 0.0
    skipped: bool = False

    def row(self) -> list:
        return [
            self.iteration,
            repr(self.mean_return),
            repr(self.max_return),
            repr(self.sigma_R),
            repr(self.evaluation_return),
            f"{self.wall_s:.3f}",
        ]


def _stream(seed: int, iteration: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, iteration, index])


def sample_directions(config: ArsConfig, iteration: int, shape=POLICY_SHAPE) -> np.ndarray:
    """(N, *shape) standard normal directions for one iteration."""
    rng = np.random.default_rng(_stream(config.seed, iteration, 0))
    return rng.standard_normal((config.num_directions_N, *shape))


def env_seed(seed: int, iteration: int, index: int) -> int:
    """Seed shared by the +nu and -nu rollouts of one direction."""
    return int(_stream(seed, iteration, index + 1).generate_state(1, np.uint32)[0])


def eval_seed(seed: int) -> int:
    # fixed across iterations so evaluation returns are comparable
    return int(_stream(seed, 0, EVAL_INDEX).generate_state(1, np.uint32)[0])


def evaluate_pair(theta, delta, nu: float, objective, seed: int) -> tuple[float, float]:
    if not nu > 0:
        raise ValueError("nu must be positive")
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    r_plus = float(objective(theta + nu * delta, seed))
    r_minus = float(objective(theta - nu * delta, seed))
    return r_plus, r_minus


def select_top(returns, b: int) -> np.ndarray:
    """Indices of the b directions with largest max(R+, R-), best first."""
    returns = np.asarray(returns, dtype=float).reshape(-1, 2)
    if not 1 <= b <= len(returns):
        raise ValueError(f"b={b} out of range for {len(returns)} directions")
    key = returns.max(axis=1)
    # stable sort on the negated key keeps lower indices first among ties
    return np.argsort(-key, kind="stable")[:b]


def selected_sigma(returns) -> float:
    return float(np.std(np.asarray(returns, dtype=float).reshape(-1)))


def update(theta, returns, deltas, beta: float) -> np.ndarray:
    """V-1t step over the already selected directions.

    ``returns`` has shape (b, 2) holding (R+, R-); ``deltas`` has shape
    (b, *theta.shape). Raises DegenerateSigma when the returns have no spread.
    """
    returns = np.asarray(returns, dtype=float).reshape(-1, 2)
    deltas = np.asarray(deltas, dtype=float)
    if len(returns) == 0:
        raise ValueError("empty selection")
    sigma = selected_sigma(returns)
    if sigma < SIGMA_EPS:
        raise DegenerateSigma(f"sigma_R={sigma:.3e} below {SIGMA_EPS:g}")
    diff = returns[:, 0] - returns[:, 1]
    step = np.tensordot(diff, deltas, axes=1)
    return np.asarray(theta, dtype=float) + beta / (len(returns) * sigma) * step


def _pair_task(args):
    theta, delta, nu, objective, seed = args
    return evaluate_pair(theta, delta, nu, objective, seed)


class _Evaluator:
    def __init__(self, objective, workers: int):
        self.objective = objective
        self.pool = None
        if workers > 1:
            self.pool = ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork"))

    def pairs(self, theta, deltas, nu, seeds) -> np.ndarray:
        tasks = [(theta, d, nu, self.objective, s) for d, s in zip(deltas, seeds)]
        if self.pool is None:
            out = [_pair_task(t) for t in tasks]
        else:
            # map() yields in submission order, so the result is index-aligned
            out = list(self.pool.map(_pair_task, tasks))
        return np.asarray(out, dtype=float)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def evaluate_policy(objective, theta, config: ArsConfig) -> float:
    return float(objective(np.asarray(theta, dtype=float), eval_seed(config.seed)))


def train(objective, config: ArsConfig, theta0, on_iteration=None, evaluate: bool = True):
    """Run ARS V-1t; returns (theta, records).

    ``on_iteration(record, theta)`` is called on the main process after every
    iteration (checkpointing, logging). Three consecutive degenerate
    iterations raise TrainingAborted.
    """
    theta = np.array(theta0, dtype=float)
    records: list[IterationRecord] = []
    streak = 0
    t_start = time.perf_counter()
    with _Evaluator(objective, config.workers) as ev:
        for it in range(config.iterations):
            deltas = sample_directions(config, it, theta.shape)
            seeds = [env_seed(config.seed, it, i) for i in range(config.num_directions_N)]
            returns = ev.pairs(theta, deltas, config.noise_nu, seeds)
            top = select_top(returns, config.top_directions_b)
            sigma = selected_sigma(returns[top])
            skipped = False
            try:
                theta = update(theta, returns[top], deltas[top], config.step_size_beta)
                streak = 0
            except DegenerateSigma as exc:
                skipped = True
                streak += 1
                log.warning("iteration %d: update skipped (%s)", it, exc)
            ev_ret = evaluate_policy(objective, theta, config) if evaluate else math.nan
            rec = IterationRecord(
                it,
                float(returns.mean()),
                float(returns.max()),
                sigma,
                ev_ret,
                time.perf_counter() - t_start,
                skipped,
            )
            records.append(rec)
            log.info(
                "iter %d mean %.4f max %.4f sigma %.4g eval %.4f", it, rec.mean_return, rec.max_return, sigma, ev_ret
            )
            if on_iteration is not None:
                on_iteration(rec, theta)
            if streak >= MAX_DEGENERATE:
                raise TrainingAborted(
                    f"{streak} consecutive iterations with sigma_R < {SIGMA_EPS:g} "
                    f"(last at iteration {it}, max return {rec.max_return!r}); "
                    "returns do not depend on the perturbations",
                    records,
                    theta,
                )
    return theta, records


def write_learning_curve(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for rec in records:
            w.writerow(rec.row())


@dataclass(frozen=True)
class QuadraticSurrogate:
    """R(theta) = -||theta - theta_star||^2; ignores the env seed."""

    theta_star: np.ndarray

    def __call__(self, theta, seed: int = 0) -> float:
        d = np.asarray(theta, dtype=float) - self.theta_star
        return -float(np.sum(d * d))

    @classmethod
    def random(cls, seed: int, shape=POLICY_SHAPE, scale: float = 0.01) -> "QuadraticSurrogate":
        return cls(np.random.default_rng(seed).normal(0.0, scale, size=shape))


def surrogate_config(seed: int, **overrides) -> ArsConfig:
    """Settings under which the quadratic surrogate converges in 200 iterations."""
    base = ArsConfig(step_size_beta=0.008, noise_nu=0.1, iterations=200, seed=seed)
    return replace(base, **overrides)
