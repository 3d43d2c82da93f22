"""Exact law of Y(t) in a fixed environment, by dense pushforward.

Works for any field object exposing ``edge_grid(lo, shape)`` (and
``directed_conductance(x, y)`` for the detailed-balance check), so test
doubles can stand in for :class:`~rwre.env_field.EnvironmentField`.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, TextIO

import numpy as np

from .env_field import check_dimension
from .estimator import unit_direction

MAX_ENTRIES = 1_000_000
BALANCE_TOL = 2.0**-40
MAX_BALANCE_RADIUS = 64

WIDE = np.longdouble


class OracleGuardError(ValueError):
    """The dense kernel would be too large; the oracle is not meant for this scale."""


@dataclass
class ExactKernel:
    """Distribution of Y(t) on the box [-radius, radius]^d.

    ``probs[x + radius]`` is P[Y(t) = x]; entries outside the L1 ball of
    radius t are exactly zero.
    """

    radius: int
    horizon: int
    probs: np.ndarray

    @property
    def d(self) -> int:
        return self.probs.ndim

    def prob(self, x: Sequence[int]) -> float:
        idx = tuple(int(c) + self.radius for c in x)
        if any(not 0 <= i < 2 * self.radius + 1 for i in idx):
            return 0.0
        return float(self.probs[idx])

    def coords(self) -> np.ndarray:
        """(..., d) array of the lattice site behind every entry of probs."""
        r = self.radius
        grids = np.meshgrid(*[np.arange(-r, r + 1)] * self.d, indexing="ij")
        return np.stack(grids, axis=-1)

    def total_mass(self) -> float:
        return float(np.sum(self.probs))

    def second_moment(self, xi) -> float:
        z = self.coords().astype(WIDE) @ unit_direction(xi).astype(WIDE)
        return float(np.sum(self.probs * z * z))

    def tail(self, r: float) -> float:
        """P[|Y(t)| >= r sqrt(t)] with the Euclidean norm."""
        c = self.coords()
        norm2 = np.sum(c * c, axis=-1)
        return float(np.sum(self.probs[norm2 >= r * r * self.horizon]))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        out = {}
        for x, p in zip(self.coords().reshape(-1, self.d), self.probs.reshape(-1)):
            if p != 0:
                out[tuple(int(c) for c in x)] = float(p)
        return out

    def to_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(self.d)] + ["probability"])
        for x, p in self.as_dict().items():
            w.writerow([*x, repr(p)])


def _check_guard(t: int, d: int) -> None:
    if t < 1:
        raise ValueError("horizon t must be >= 1")
    if (2 * t + 1) ** d > MAX_ENTRIES:
        raise OracleGuardError(
            f"dense kernel for t={t}, d={d} needs {(2 * t + 1) ** d} entries (limit {MAX_ENTRIES})"
        )


def transition_grid(field, t: int, d: int):
    """Jump probabilities on the padded box [-t-1, t+1]^d.

    Returns (up, down), each of shape (d, L, ..., L): up[a] is P(x -> x + e_a),
    down[a] is P(x -> x - e_a).
    """
    size = 2 * t + 3
    g = np.asarray(field.edge_grid((-t - 1,) * d, (size,) * d), dtype=WIDE)
    up = g
    # edge (x - e_a, a) sits one slot lower along axis a; slot 0 is never reached
    down = np.stack([np.roll(g[a], 1, axis=a) for a in range(d)])
    weight = np.zeros(g.shape[1:], dtype=WIDE)
    for a in range(d):
        weight = weight + up[a] + down[a]
    return up / weight, down / weight


def exact_distribution(field, t: int, d: int = 2) -> ExactKernel:
    """Law of Y(t) under P^omega_0, by t pushforward steps of the jump kernel."""
    d = check_dimension(d)
    t = int(t)
    _check_guard(t, d)
    up, down = transition_grid(field, t, d)
    mass = np.zeros(up.shape[1:], dtype=WIDE)
    mass[(t + 1,) * d] = 1
    for _ in range(t):
        nxt = np.zeros_like(mass)
        # fixed summation order keeps the result reproducible
        for a in range(d):
            nxt += np.roll(mass * up[a], 1, axis=a)
            nxt += np.roll(mass * down[a], -1, axis=a)
        mass = nxt
    inner = (slice(1, -1),) * d
    return ExactKernel(radius=t, horizon=t, probs=mass[inner])


def exact_sigma_t(field, xi, t: int, d: int = 2) -> float:
    """E^omega_0[(xi . Y(t))^2] / t for this one environment."""
    return exact_distribution(field, t, d).second_moment(xi) / t


class BalanceCheck(NamedTuple):
    ok: bool
    max_violation: float


def _ball(radius: int, d: int):
    rng = range(-radius, radius + 1)
    for x in itertools.product(rng, repeat=d):
        if sum(abs(c) for c in x) <= radius:
            yield x


def check_detailed_balance(field, radius: int, d: int = 2) -> BalanceCheck:
    """max |p(x) P(x->y) - p(y) P(y->x)| over edges with both ends in the L1 ball."""
    d = check_dimension(d)
    if not 0 <= radius <= MAX_BALANCE_RADIUS:
        raise ValueError(f"radius must lie in [0, {MAX_BALANCE_RADIUS}]")
    cache: dict = {}

    def around(x):
        if x not in cache:
            nbrs = []
            for a in range(d):
                for s in (1, -1):
                    y = tuple(c + s * (i == a) for i, c in enumerate(x))
                    nbrs.append((y, field.directed_conductance(x, y)))
            cache[x] = (dict(nbrs), math.fsum(c for _, c in nbrs))
        return cache[x]

    worst = 0.0
    for x in _ball(radius, d):
        cx, px = around(x)
        for a in range(d):
            y = tuple(c + (i == a) for i, c in enumerate(x))
            if sum(abs(c) for c in y) > radius:
                continue
            cy, py = around(y)
            flow_xy = px * (cx[y] / px)
            flow_yx = py * (cy[x] / py)
            worst = max(worst, abs(flow_xy - flow_yx))
    return BalanceCheck(worst <= BALANCE_TOL, worst)


def total_variation(kernel: ExactKernel, positions: np.ndarray) -> float:
    """TV distance between the empirical law of ``positions`` and the kernel."""
    positions = np.asarray(positions, dtype=np.int64)
    r = kernel.radius
    if np.any(np.abs(positions) > r):
        raise ValueError("positions fall outside the kernel box")
    idx = np.ravel_multi_index(tuple((positions + r).T), kernel.probs.shape)
    emp = np.bincount(idx, minlength=kernel.probs.size) / len(positions)
    return 0.5 * float(np.sum(np.abs(emp - kernel.probs.reshape(-1).astype(np.float64))))
