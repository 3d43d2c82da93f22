"""Weighted estimator of the finite-time variance and its error bars.

Walk i contributes its origin weight w_i = p(omega^(i)) and its projection
z_i = xi . Y^(i)(t).  The estimate is

    a_hat = sum(w_i z_i^2) / (t * sum(w_i)),

which de-tilts samples drawn under P into expectations under the tilted law.
The homogenized coefficient along xi is (E[p] / 2) * a_hat.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy import stats

from .env_field import ConductanceLaw

# running sums, in this order
MOMENTS = ("w", "wq", "ww", "wqwq", "wwq", "z", "q", "zq", "qq")
_IDX = {name: i for i, name in enumerate(MOMENTS)}

Z95 = NormalDist().inv_cdf(0.975)


class HorizonMismatchError(ValueError):
    """Outcomes or states from different horizons were combined."""


def unit_direction(xi: Sequence[float]) -> np.ndarray:
    v = np.asarray(xi, dtype=np.float64).reshape(-1)
    norm = float(np.sqrt(np.sum(v * v)))
    if not norm > 0 or not math.isfinite(norm):
        raise ValueError(f"direction must be a nonzero finite vector, got {xi!r}")
    return v / norm


def _terms(w, z):
    q = z * z
    wq = w * q
    return np.stack([w, wq, w * w, wq * wq, w * wq, z, q, z * q, q * q])


@dataclass(frozen=True)
class EstimatorState:
    """Mergeable running sums for one horizon; a value, never mutated in place.

    Each sum carries a Neumaier compensation term.
    """

    t: float
    n: int = 0
    sums: np.ndarray = field(default_factory=lambda: np.zeros(len(MOMENTS)))
    comp: np.ndarray = field(default_factory=lambda: np.zeros(len(MOMENTS)))

    def __eq__(self, other):
        return (
            isinstance(other, EstimatorState)
            and self.t == other.t
            and self.n == other.n
            and np.array_equal(self.sums, other.sums)
            and np.array_equal(self.comp, other.comp)
        )

    def total(self, name: str) -> float:
        i = _IDX[name]
        return float(self.sums[i] + self.comp[i])

    def _plus(self, n, vals, comp=None):
        s = self.sums + vals
        err = np.where(np.abs(self.sums) >= np.abs(vals), (self.sums - s) + vals, (vals - s) + self.sums)
        c = self.comp + (comp if comp is not None else 0.0) + err
        return EstimatorState(self.t, self.n + n, s, c)

    def _check(self, horizon):
        if horizon != self.t:
            raise HorizonMismatchError(f"horizon {horizon} does not match state horizon {self.t}")

    def accumulate(self, outcome, xi) -> EstimatorState:
        """Add one WalkOutcome projected on the unit direction xi."""
        self._check(outcome.horizon)
        z = float(np.dot(np.asarray(outcome.final_position, dtype=np.float64), unit_direction(xi)))
        return self._plus(1, _terms(np.array([outcome.origin_weight]), np.array([z]))[:, 0])

    def accumulate_batch(self, weights, projections, horizon=None) -> EstimatorState:
        """Add many walks at once from arrays of origin weights and projections."""
        if horizon is not None:
            self._check(horizon)
        w = np.asarray(weights, dtype=np.float64)
        z = np.asarray(projections, dtype=np.float64)
        if w.shape != z.shape:
            raise ValueError("weights and projections must have the same shape")
        if w.size == 0:
            return self
        return self._plus(w.size, _terms(w, z).sum(axis=1))

    def merge(self, other: EstimatorState) -> EstimatorState:
        self._check(other.t)
        return self._plus(other.n, other.sums, other.comp)


def accumulate(state: EstimatorState, outcome, xi) -> EstimatorState:
    return state.accumulate(outcome, xi)


def merge(a: EstimatorState, b: EstimatorState) -> EstimatorState:
    return a.merge(b)


def state_from_batch(batch, xi, t=None) -> EstimatorState:
    """Estimator state of a WalkBatch projected on xi."""
    z = batch.positions.astype(np.float64) @ unit_direction(xi)
    return EstimatorState(batch.horizon if t is None else t).accumulate_batch(batch.origin_weights, z)


CSV_FIELDS = ("t", "n", "a_hat", "p_hat", "ahom_direction", "ci_halfwidth", "seed")


@dataclass(frozen=True)
class EstimateReport:
    t: float
    n: int
    a_hat: float
    p_hat: float
    sigma2_direction: float
    ahom_direction: float
    ci_halfwidth: float
    ahom_ci_halfwidth: float
    seed: int | None = None

    def csv_row(self) -> list:
        return [getattr(self, k) for k in CSV_FIELDS]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def ratio_variance(state: EstimatorState) -> float:
    """Delta-method variance of sum(w z^2) / sum(w)."""
    n = state.n
    sw, swq = state.total("w"), state.total("wq")
    r = swq / sw
    ss = state.total("wqwq") - 2.0 * r * state.total("wwq") + r * r * state.total("ww")
    s2 = max(ss, 0.0) / (n - 1)
    wbar = sw / n
    return s2 / (n * wbar * wbar)


def report(state: EstimatorState, law: ConductanceLaw, d: int, seed: int | None = None) -> EstimateReport:
    if state.n < 2:
        raise ValueError("need at least two walks for a variance estimate")
    ep = law.mean_site_weight(d)
    t = state.t
    sw = state.total("w")
    a_hat = state.total("wq") / (t * sw)
    hw = Z95 * math.sqrt(ratio_variance(state)) / t
    return EstimateReport(
        t=t,
        n=state.n,
        a_hat=a_hat,
        p_hat=sw / (state.n * ep),
        sigma2_direction=a_hat,
        ahom_direction=0.5 * ep * a_hat,
        ci_halfwidth=hw,
        ahom_ci_halfwidth=0.5 * ep * hw,
        seed=seed,
    )


@dataclass
class FluctuationSample:
    """Rescaled deviations t * (A_hat_j - pooled mean) over m repetitions."""

    t: float
    deviations: np.ndarray
    pooled_mean: float
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float

    @property
    def m(self) -> int:
        return len(self.deviations)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("deviations")
        d["m"] = self.m
        return d


def fluctuation_sample(a_hats: Sequence[float], t: float) -> FluctuationSample:
    a = np.asarray(a_hats, dtype=np.float64)
    if a.size < 2:
        raise ValueError("need at least two repetitions")
    pooled = math.fsum(a) / a.size
    dev = t * (a - pooled)
    var = float(np.var(dev, ddof=1))
    if var > 0:
        skew = float(stats.skew(dev))
        kurt = float(stats.kurtosis(dev))
    else:
        skew = kurt = math.nan
    return FluctuationSample(t, dev, pooled, float(np.mean(dev)), var, skew, kurt)


def estimate_matrix(batch, law: ConductanceLaw, d: int) -> np.ndarray:
    """Full A_hom estimate from one batch, off-diagonals by polarization.

    Uses xi = e_i on the diagonal and xi = (e_i + e_j)/sqrt(2) off it, where
    xi.A.xi = (A_ii + A_jj)/2 + A_ij.
    """
    eye = np.eye(d)
    out = np.empty((d, d))
    for i in range(d):
        out[i, i] = report(state_from_batch(batch, eye[i]), law, d).ahom_direction
    for i in range(d):
        for j in range(i + 1, d):
            v = report(state_from_batch(batch, eye[i] + eye[j]), law, d).ahom_direction
            out[i, j] = out[j, i] = v - 0.5 * (out[i, i] + out[j, j])
    return out
