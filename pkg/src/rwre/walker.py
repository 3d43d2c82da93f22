"""Discrete-time walk Y and continuous-time walk X in a fixed environment.

Walk i normally lives in environment i and reads its decisions from the
stream keyed ``(seed, i)``; the oracle tests instead run many streams in one
environment.  Either way the result depends only on the keys, never on the
order in which walks are executed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from typing import Sequence, TextIO

import numpy as np

from ._kernels import _continuous_batch, _continuous_walk, _discrete_batch, _discrete_walk
from .env_field import ConductanceLaw, EnvironmentField, check_dimension, parse_seed

@dataclass(frozen=True)
class WalkRng:
    """Key of one walk's decision stream."""

    seed: int
    stream: int

    def __post_init__(self):
        object.__setattr__(self, "seed", parse_seed(self.seed))
        object.__setattr__(self, "stream", int(self.stream))


@dataclass
class WalkOutcome:
    final_position: tuple[int, ...]
    origin_weight: float
    horizon: float
    env_index: int
    jumps: int | None = None
    draws: int = 0
    trace: np.ndarray | None = dc_field(default=None, repr=False)


@dataclass
class WalkBatch:
    """Final positions and origin weights of many independent walks."""

    positions: np.ndarray
    origin_weights: np.ndarray
    horizon: float
    draws: int
    jumps: np.ndarray | None = None

    def __len__(self):
        return len(self.origin_weights)


def draws_per_discrete_walk(t: int, d: int) -> int:
    """Philox blocks consumed by one Y walk of t steps."""
    return 2 * d * t + -(-t // 4)


def step_distribution(field: EnvironmentField, x: Sequence[int]) -> np.ndarray:
    """Jump probabilities from x, ordered (+e_0, -e_0, +e_1, -e_1, ...)."""
    c = field.incident(x)
    return c / c.sum()


def _ids(ids, n=None):
    return np.ascontiguousarray(np.asarray(ids, dtype=np.uint64).reshape(-1))


def simulate_discrete(law: ConductanceLaw, d: int, seed, t: int, env_ids, stream_ids=None) -> WalkBatch:
    """Run Y for t steps, walk i in environment env_ids[i] with stream stream_ids[i].

    ``stream_ids`` defaults to ``env_ids`` (one walk per environment).
    """
    if int(t) < 1:
        raise ValueError("horizon t must be >= 1")
    d = check_dimension(d)
    env = _ids(env_ids)
    streams = env if stream_ids is None else _ids(stream_ids)
    if streams.shape != env.shape:
        raise ValueError("env_ids and stream_ids must have the same length")
    kind, a, b, p = law.arrays(d)
    pos, w, calls = _discrete_batch(kind, a, b, p, np.uint64(parse_seed(seed)), env, streams, int(t), d)
    return WalkBatch(pos, w, int(t), int(calls))


def simulate_continuous(law: ConductanceLaw, d: int, seed, t: float, env_ids, stream_ids=None) -> WalkBatch:
    """Run X up to real time t; same keying conventions as :func:`simulate_discrete`."""
    if not t > 0:
        raise ValueError("horizon t must be > 0")
    d = check_dimension(d)
    env = _ids(env_ids)
    streams = env if stream_ids is None else _ids(stream_ids)
    kind, a, b, p = law.arrays(d)
    pos, w, jumps, calls = _continuous_batch(
        kind, a, b, p, np.uint64(parse_seed(seed)), env, streams, float(t), d
    )
    return WalkBatch(pos, w, float(t), int(calls), jumps)


def run_discrete_walk(field: EnvironmentField, rng: WalkRng | None = None, t: int = 1,
                      d: int = 2, trace: bool = False) -> WalkOutcome:
    """One Y walk of exactly t steps from the origin of Z^d.

    With ``trace=True`` the outcome carries the full (t+1, d) path.
    """
    if int(t) < 1:
        raise ValueError("horizon t must be >= 1")
    d = check_dimension(d)
    rng = rng or WalkRng(field.seed, field.env_index)
    kind, a, b, p = field.law.arrays(d)
    pos = np.zeros(d, dtype=np.int64)
    path = np.zeros((int(t) + 1 if trace else 0, d), dtype=np.int64)
    w, calls = _discrete_walk(
        kind, a, b, p, np.uint64(rng.seed), np.uint64(field.env_index), np.uint64(rng.stream),
        int(t), d, pos, np.empty(2 * d), path,
    )
    return WalkOutcome(tuple(int(c) for c in pos), float(w), int(t), field.env_index,
                       draws=int(calls), trace=path if trace else None)


def run_continuous_walk(field: EnvironmentField, rng: WalkRng | None = None, t: float = 1.0,
                        d: int = 2) -> WalkOutcome:
    if not t > 0:
        raise ValueError("horizon t must be > 0")
    d = check_dimension(d)
    rng = rng or WalkRng(field.seed, field.env_index)
    kind, a, b, p = field.law.arrays(d)
    pos = np.zeros(d, dtype=np.int64)
    w, jumps, calls = _continuous_walk(
        kind, a, b, p, np.uint64(rng.seed), np.uint64(field.env_index), np.uint64(rng.stream),
        float(t), d, pos, np.empty(2 * d),
    )
    return WalkOutcome(tuple(int(c) for c in pos), float(w), float(t), field.env_index,
                       jumps=int(jumps), draws=int(calls))


def write_trace_csv(outcome: WalkOutcome, fh: TextIO) -> None:
    """One line per step: step index followed by the site coordinates."""
    if outcome.trace is None:
        raise ValueError("outcome was produced without trace=True")
    d = outcome.trace.shape[1]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step"] + [f"x{i}" for i in range(d)])
    for s, site in enumerate(outcome.trace):
        w.writerow([s, *(int(c) for c in site)])
