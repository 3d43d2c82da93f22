"""Lazily evaluated i.i.d. conductance environments on the edges of Z^d.

A conductance is never stored.  It is recomputed on demand as a pure function
of ``(seed, env_index, edge)`` through a Philox block, so any number of
readers, in any order, see the same environment.

Lattice points are plain tuples of ints.  Axes are 0-based: the edge keyed
``(x, a)`` joins ``x`` and ``x + e_a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import (
    TWO_POINT,
    UNIFORM,
    _conductance_many,
    _incident_many,
    _origin_weights,
    incident_conductances,
)

MAX_DIM = 3
_U64 = 1 << 64

_KIND_CODES = {"two_point": TWO_POINT, "uniform": UNIFORM}


class InvalidLawError(ValueError):
    """Conductance law parameters violate 0 < alpha <= beta or 0 <= p <= 1."""


def check_dimension(d: int) -> int:
    d = int(d)
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {d}")
    return d


def parse_seed(text) -> int:
    """Parse a 64-bit unsigned seed given as an int, a decimal or a 0x-hex string."""
    if isinstance(text, (int, np.integer)):
        value = int(text)
    else:
        s = str(text).strip().lower()
        value = int(s, 16) if s.startswith("0x") else int(s, 10)
    if not 0 <= value < _U64:
        raise ValueError(f"seed out of 64-bit unsigned range: {text!r}")
    return value


def _as_tuple(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(float(x) for x in v)
    return float(v)


@dataclass(frozen=True)
class ConductanceLaw:
    """Marginal law of a single edge conductance.

    ``alpha``, ``beta`` and ``prob_alpha`` are scalars for an isotropic law or
    tuples with one entry per axis.  For ``two_point`` an edge takes ``alpha``
    with probability ``prob_alpha`` and ``beta`` otherwise; for ``uniform`` it
    is uniform on ``[alpha, beta]`` and ``prob_alpha`` is ignored.
    """

    kind: str
    alpha: float | tuple[float, ...]
    beta: float | tuple[float, ...]
    prob_alpha: float | tuple[float, ...] = 0.5

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise InvalidLawError(f"unknown law kind {self.kind!r}")
        for name in ("alpha", "beta", "prob_alpha"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        lengths = {len(v) for v in (self.alpha, self.beta, self.prob_alpha) if isinstance(v, tuple)}
        if len(lengths) > 1:
            raise InvalidLawError("per-axis parameters must all have the same length")
        n = lengths.pop() if lengths else 1
        a, b, p = self._columns(n)
        for ai, bi, pi in zip(a, b, p):
            if not (math.isfinite(ai) and math.isfinite(bi)) or ai <= 0 or bi < ai:
                raise InvalidLawError(f"need 0 < alpha <= beta, got alpha={ai}, beta={bi}")
            if not 0.0 <= pi <= 1.0:
                raise InvalidLawError(f"prob_alpha must lie in [0, 1], got {pi}")

    @classmethod
    def two_point(cls, alpha, beta, prob_alpha=0.5) -> ConductanceLaw:
        return cls("two_point", alpha, beta, prob_alpha)

    @classmethod
    def uniform(cls, alpha, beta) -> ConductanceLaw:
        return cls("uniform", alpha, beta, 0.5)

    @classmethod
    def constant(cls, c) -> ConductanceLaw:
        return cls("two_point", c, c, 1.0)

    @classmethod
    def parse(cls, text: str) -> ConductanceLaw:
        """Parse ``two_point:1,4,0.5``, ``uniform:1,3`` or ``constant:2``."""
        kind, _, rest = text.strip().partition(":")
        try:
            values = [float(v) for v in rest.split(",") if v.strip()]
        except ValueError:
            raise InvalidLawError(f"cannot parse law {text!r}") from None
        if kind == "two_point" and len(values) in (2, 3):
            return cls.two_point(*values)
        if kind == "uniform" and len(values) == 2:
            return cls.uniform(*values)
        if kind == "constant" and len(values) == 1:
            return cls.constant(values[0])
        raise InvalidLawError(f"cannot parse law {text!r}")

    @classmethod
    def from_dict(cls, data: dict) -> ConductanceLaw:
        return cls(data["kind"], data["alpha"], data["beta"], data.get("prob_alpha", 0.5))

    def to_dict(self) -> dict:
        def plain(v):
            return list(v) if isinstance(v, tuple) else v

        return {
            "kind": self.kind,
            "alpha": plain(self.alpha),
            "beta": plain(self.beta),
            "prob_alpha": plain(self.prob_alpha),
        }

    def _columns(self, d):
        def col(v):
            if isinstance(v, tuple):
                if len(v) != d:
                    raise ValueError(f"law has {len(v)} axes, dimension is {d}")
                return np.array(v, dtype=np.float64)
            return np.full(d, v, dtype=np.float64)

        return col(self.alpha), col(self.beta), col(self.prob_alpha)

    def arrays(self, d: int):
        """(kind code, alpha[d], beta[d], prob[d]) as consumed by the compiled kernels."""
        a, b, p = self._columns(d)
        return _KIND_CODES[self.kind], a, b, p

    @property
    def is_isotropic(self) -> bool:
        return not any(isinstance(v, tuple) for v in (self.alpha, self.beta, self.prob_alpha))

    def axis_means(self, d: int) -> np.ndarray:
        a, b, p = self._columns(d)
        if self.kind == "two_point":
            return p * a + (1.0 - p) * b
        return 0.5 * (a + b)

    def axis_variances(self, d: int) -> np.ndarray:
        a, b, p = self._columns(d)
        if self.kind == "two_point":
            return p * (1.0 - p) * (b - a) ** 2
        return (b - a) ** 2 / 12.0

    def mean_edge_conductance(self, d: int = 1) -> float:
        """E[omega_e], averaged over axes for anisotropic laws."""
        return float(np.mean(self.axis_means(d)))

    def mean_site_weight(self, d: int) -> float:
        """E[p] = sum over the 2d incident edges of their mean conductance."""
        return float(2.0 * np.sum(self.axis_means(d)))

    def site_weight_variance(self, d: int) -> float:
        return float(2.0 * np.sum(self.axis_variances(d)))

    def constant_value(self, d: int = 1) -> float | None:
        """The conductance if the law is deterministic and isotropic, else None."""
        a, b, p = self._columns(d)
        if self.kind == "two_point":
            vals = np.where(p == 1.0, a, np.where(p == 0.0, b, np.nan))
            vals = np.where(a == b, a, vals)
        else:
            vals = np.where(a == b, a, np.nan)
        if np.all(np.isfinite(vals)) and np.all(vals == vals[0]):
            return float(vals[0])
        return None

    def bounds(self, d: int = 1) -> tuple[float, float]:
        a, b, _ = self._columns(d)
        return float(a.min()), float(b.max())


def mean_site_weight(law: ConductanceLaw, d: int) -> float:
    return law.mean_site_weight(d)


@dataclass(frozen=True)
class Edge:
    """Undirected nearest-neighbour edge, keyed canonically as (base, axis)."""

    base: tuple[int, ...]
    axis: int

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(int(c) for c in self.base))
        if not 0 <= self.axis < len(self.base):
            raise ValueError(f"axis {self.axis} out of range for dimension {len(self.base)}")

    @classmethod
    def between(cls, x: Sequence[int], y: Sequence[int]) -> Edge:
        x, y = tuple(int(c) for c in x), tuple(int(c) for c in y)
        diff = [b - a for a, b in zip(x, y)]
        if len(x) != len(y) or sum(abs(v) for v in diff) != 1:
            raise ValueError(f"{x} and {y} are not nearest neighbours")
        axis = next(i for i, v in enumerate(diff) if v)
        return cls(x if diff[axis] == 1 else y, axis)

    @property
    def head(self) -> tuple[int, ...]:
        return tuple(c + (i == self.axis) for i, c in enumerate(self.base))


@dataclass(frozen=True)
class EnvironmentField:
    """One random environment omega^(env_index) drawn under a master seed."""

    law: ConductanceLaw
    seed: int
    env_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", parse_seed(self.seed))
        if not 0 <= int(self.env_index) < _U64:
            raise ValueError("env_index out of 64-bit unsigned range")
        object.__setattr__(self, "env_index", int(self.env_index))

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return np.uint64(self.seed), np.uint64(self.env_index)

    def conductance(self, edge: Edge) -> float:
        return float(self.conductances([edge.base], [edge.axis])[0])

    def conductances(self, bases, axes) -> np.ndarray:
        """Vectorised lookup of edges (bases[i], axes[i])."""
        bases = np.ascontiguousarray(bases, dtype=np.int64)
        axes = np.ascontiguousarray(axes, dtype=np.int64)
        d = check_dimension(bases.shape[1])
        kind, a, b, p = self.law.arrays(d)
        return _conductance_many(kind, a, b, p, *self.key, bases, axes)

    def incident(self, x: Sequence[int]) -> np.ndarray:
        """Conductances around x in the order (+e_0, -e_0, +e_1, -e_1, ...)."""
        sites = np.asarray([x], dtype=np.int64)
        d = check_dimension(sites.shape[1])
        kind, a, b, p = self.law.arrays(d)
        out, _ = _incident_many(kind, a, b, p, *self.key, sites)
        return out[0]

    def site_weight(self, x: Sequence[int]) -> float:
        """p_omega(x), the total conductance of the 2d edges at x."""
        sites = np.asarray([x], dtype=np.int64)
        d = check_dimension(sites.shape[1])
        kind, a, b, p = self.law.arrays(d)
        _, w = _incident_many(kind, a, b, p, *self.key, sites)
        return float(w[0])

    def directed_conductance(self, x: Sequence[int], y: Sequence[int]) -> float:
        return self.conductance(Edge.between(x, y))

    def edge_grid(self, lo: Sequence[int], shape: Sequence[int]) -> np.ndarray:
        """Array g with g[a][i] = conductance of edge (lo + i, a) over a box."""
        d = check_dimension(len(lo))
        idx = np.indices(shape).reshape(d, -1).T + np.asarray(lo, dtype=np.int64)
        n = idx.shape[0]
        out = np.empty((d,) + tuple(shape))
        for a in range(d):
            out[a] = self.conductances(idx, np.full(n, a)).reshape(shape)
        return out


def origin_weights(law: ConductanceLaw, d: int, seed: int, env_ids) -> np.ndarray:
    """p(omega^(i)) for each environment index in env_ids."""
    d = check_dimension(d)
    kind, a, b, p = law.arrays(d)
    ids = np.ascontiguousarray(env_ids, dtype=np.uint64)
    return _origin_weights(kind, a, b, p, np.uint64(parse_seed(seed)), ids, d)
