"""Experiment drivers: systematic-error sweeps, fluctuation histograms,
heat-kernel diagnostics, and their CSV/JSON outputs.

Walks are split into fixed-size shards of contiguous walk indices.  Shard
boundaries never depend on the worker count and shard states are merged in
index order, so results are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .env_field import ConductanceLaw, check_dimension, origin_weights, parse_seed
from .estimator import (
    EstimatorState,
    FluctuationSample,
    fluctuation_sample,
    report,
    state_from_batch,
    unit_direction,
)
from .walker import draws_per_discrete_walk, simulate_continuous, simulate_discrete

TABLE1_HORIZONS = (10, 20, 40, 80, 160, 320, 640)
TABLE1_K = (100_000, 3000, 3000, 1000, 500, 100, 20)
TABLE1_ERROR = (1.27e-01, 7.43e-02, 4.17e-02, 2.46e-02, 1.26e-02, 6.96e-03, 3.72e-03)

SHARD = 1 << 16
HIST_BINS = 61
HIST_SDS = 6.0
TAIL_RADII = (0.0, 1.0, 2.0, 3.0, 4.0)
PCURVE_SIZES = (100, 1000, 10_000)

MODES = ("sweep", "fluctuations", "diagnostics")
# walk-index namespaces: bits 60-63 pick the experiment, bits 36-59 the horizon
_NS = {"sweep": 0, "fluctuations": 1, "diagnostics": 2, "pcurve": 3, "continuous": 4, "estimate": 5}
_MAX_T = 1 << 24
_MAX_WALKS = 1 << 36


class BudgetExceededError(RuntimeError):
    """The projected number of generator invocations exceeds the budget."""


def index_base(namespace: str, t: int) -> int:
    if not 1 <= t < _MAX_T:
        raise ValueError(f"horizon {t} outside supported range")
    return (_NS[namespace] << 60) | (int(t) << 36)


def reference_ahom(law: ConductanceLaw, d: int, xi=None) -> float | None:
    """Exact xi.A_hom.xi where it is known in closed form, else None.

    Constant conductance c gives A_hom = c Id in any dimension.  In d = 2 the
    symmetric two-point law gives the Dykhne value sqrt(alpha beta) Id.
    """
    c = law.constant_value(d)
    if c is not None:
        return c
    if law.kind == "two_point" and law.is_isotropic and d == 2 and law.prob_alpha == 0.5:
        return math.sqrt(law.alpha * law.beta)
    return None


@dataclass(frozen=True)
class StudyPlan:
    law: ConductanceLaw
    seed: int
    d: int = 2
    xi: tuple[float, ...] = (1.0, 0.0)
    horizons: tuple[int, ...] = TABLE1_HORIZONS
    replication: dict = field(default_factory=lambda: dict(zip(TABLE1_HORIZONS, TABLE1_K)))
    mode: str = "sweep"
    repetitions: int = 100
    walks: int | None = None
    lam: float = 0.05
    budget_draws: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "seed", parse_seed(self.seed))
        object.__setattr__(self, "d", check_dimension(self.d))
        object.__setattr__(self, "xi", tuple(float(v) for v in unit_direction(self.xi)))
        object.__setattr__(self, "horizons", tuple(int(t) for t in self.horizons))
        object.__setattr__(self, "replication", {int(k): int(v) for k, v in self.replication.items()})
        if len(self.xi) != self.d:
            raise ValueError(f"direction has {len(self.xi)} components, dimension is {self.d}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.horizons or any(t < 1 for t in self.horizons):
            raise ValueError("horizons must be positive")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError("horizons must be strictly increasing")
        for t in self.horizons:
            if self.walks is None and self.replication.get(t, 0) < 1:
                raise ValueError(f"replication K({t}) must be >= 1")
            if self.n(t) >= _MAX_WALKS:
                raise ValueError(f"too many walks at t={t}")
        if self.walks is not None and self.walks < 2:
            raise ValueError("walks must be >= 2")
        if self.mode == "fluctuations" and self.repetitions < 2:
            raise ValueError("fluctuations need at least two repetitions")

    @classmethod
    def table1(cls, law: ConductanceLaw, seed, scale: float = 1.0,
               horizons: Sequence[int] | None = None, **kw) -> StudyPlan:
        """Horizon/replication schedule of the reference table, K scaled by ``scale``."""
        if not scale > 0:
            raise ValueError("scale must be positive")
        sched = {t: max(1, round(k * scale)) for t, k in zip(TABLE1_HORIZONS, TABLE1_K)}
        hs = tuple(horizons) if horizons is not None else TABLE1_HORIZONS
        unknown = set(hs) - set(sched)
        if unknown:
            raise ValueError(f"horizons {sorted(unknown)} are not in the table schedule")
        return cls(law=law, seed=seed, horizons=hs, replication={t: sched[t] for t in hs}, **kw)

    def K(self, t: int) -> int:
        return self.replication.get(t, 1)

    def n(self, t: int) -> int:
        """Walks per estimate at horizon t: K(t) t^2 unless a fixed count is set."""
        return self.walks if self.walks is not None else self.K(t) * t * t

    def projected_draws(self) -> int:
        total = 0
        for t in self.horizons:
            per = self.n(t) * draws_per_discrete_walk(t, self.d)
            if self.mode == "fluctuations":
                per *= self.repetitions
            elif self.mode == "diagnostics":
                per += self.repetitions * sum(PCURVE_SIZES) * 2 * self.d
            total += per
        return total

    def check_budget(self) -> None:
        if self.budget_draws is not None and self.projected_draws() > self.budget_draws:
            raise BudgetExceededError(
                f"projected {self.projected_draws()} draws exceed budget {self.budget_draws}"
            )

    def to_dict(self) -> dict:
        return {
            "law": self.law.to_dict(),
            "seed": self.seed,
            "d": self.d,
            "xi": list(self.xi),
            "horizons": list(self.horizons),
            "replication": {str(t): self.K(t) for t in self.horizons},
            "n": {str(t): self.n(t) for t in self.horizons},
            "mode": self.mode,
            "repetitions": self.repetitions,
            "walks": self.walks,
            "lam": self.lam,
            "budget_draws": self.budget_draws,
        }


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _shards(start: int, count: int, size: int) -> list[tuple[int, int]]:
    return [(start + i, min(size, count - i)) for i in range(0, count, size)]


def simulate_state(law, d, seed, xi, t, start, count, workers=1, shard_size=SHARD):
    """Estimator state of ``count`` walks with indices start, start+1, ...

    Returns (state, generator invocations).
    """

    def one(rng):
        lo, m = rng
        batch = simulate_discrete(law, d, seed, t, np.arange(lo, lo + m, dtype=np.uint64))
        return state_from_batch(batch, xi), batch.draws

    parts = _map_ordered(one, _shards(start, count, shard_size), workers)
    state, draws = EstimatorState(t), 0
    for s, n in parts:
        state = state.merge(s)
        draws += n
    return state, draws


def estimate(law: ConductanceLaw, d: int, xi, t: int, n: int, seed, workers: int = 1):
    """Single EstimateReport for n walks of horizon t."""
    seed = parse_seed(seed)
    state, _ = simulate_state(law, d, seed, unit_direction(xi), int(t), index_base("estimate", t), n, workers)
    return report(state, law, d, seed)


def estimate_continuous(law: ConductanceLaw, d: int, xi, t: float, n: int, seed, workers: int = 1):
    """Estimate of 2 xi.A_hom.xi from X: mean (xi . X(t))^2 / t, with its 95% half-width."""
    seed = parse_seed(seed)
    xi = unit_direction(xi)
    start = index_base("continuous", max(1, int(t)))

    def one(rng):
        lo, m = rng
        b = simulate_continuous(law, d, seed, t, np.arange(lo, lo + m, dtype=np.uint64))
        z = b.positions.astype(np.float64) @ xi
        q = z * z
        return q.sum(), (q * q).sum(), m

    parts = _map_ordered(one, _shards(start, n, SHARD), workers)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / (n - 1)
    from .estimator import Z95

    return mean / t, Z95 * math.sqrt(var / n) / t


@dataclass
class StudyRecord:
    t: int
    n: int
    K: int
    a_hat: float
    p_hat: float
    ahom_direction: float
    ci_halfwidth: float
    ahom_ci_halfwidth: float
    systematic_error: float | None
    rng_draws: int
    wall_seconds: float


RECORD_COLUMNS = (
    "t", "n", "K", "a_hat", "p_hat", "ahom_direction", "ci_halfwidth",
    "ahom_ci_halfwidth", "systematic_error", "rng_draws",
)


def run_sweep(plan: StudyPlan, workers: int = 1, shard_size: int = SHARD) -> list[StudyRecord]:
    if plan.mode != "sweep":
        raise ValueError("plan mode must be 'sweep'")
    plan.check_budget()
    ref = reference_ahom(plan.law, plan.d, plan.xi)
    out = []
    for t in plan.horizons:
        t0 = time.perf_counter()
        n = plan.n(t)
        state, draws = simulate_state(
            plan.law, plan.d, plan.seed, np.asarray(plan.xi), t, index_base("sweep", t), n, workers, shard_size
        )
        rep = report(state, plan.law, plan.d, plan.seed)
        err = abs(ref - rep.ahom_direction) if ref is not None else None
        out.append(StudyRecord(
            t=t, n=n, K=plan.K(t), a_hat=rep.a_hat, p_hat=rep.p_hat,
            ahom_direction=rep.ahom_direction, ci_halfwidth=rep.ci_halfwidth,
            ahom_ci_halfwidth=rep.ahom_ci_halfwidth, systematic_error=err,
            rng_draws=draws, wall_seconds=time.perf_counter() - t0,
        ))
    return out


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual_se: float
    points: int


def fit_rate(records: Iterable) -> RateFit:
    """OLS of log(error) on log(t).

    Accepts StudyRecords or (t, error) pairs.
    """
    pts = []
    for r in records:
        t, e = (r.t, r.systematic_error) if hasattr(r, "systematic_error") else r
        if e is None or not e > 0:
            raise ValueError(f"non-positive or missing error at t={t}")
        pts.append((math.log(t), math.log(e)))
    if len(pts) < 3:
        raise ValueError("need at least three points for a rate fit")
    x, y = np.array(pts).T
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    rse = math.sqrt(float(resid @ resid) / (len(pts) - 2))
    return RateFit(float(slope), float(intercept), rse, len(pts))


@dataclass
class FluctuationResult:
    t: int
    n: int
    sample: FluctuationSample
    a_hats: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    rng_draws: int

    @property
    def clt_scale(self) -> float:
        return self.t / math.sqrt(self.n)

    @property
    def sd(self) -> float:
        return math.sqrt(self.sample.variance)


def repeated_estimates(law, d, seed, xi, t, n, m, start, workers=1):
    """A_hat from m disjoint blocks of n walks each; returns (a_hats, draws)."""
    per = max(1, SHARD // n)
    chunks = [(j, min(per, m - j)) for j in range(0, m, per)]

    def one(chunk):
        j, k = chunk
        lo = start + j * n
        b = simulate_discrete(law, d, seed, t, np.arange(lo, lo + k * n, dtype=np.uint64))
        z = (b.positions.astype(np.float64) @ xi).reshape(k, n)
        w = b.origin_weights.reshape(k, n)
        return (w * z * z).sum(axis=1) / (t * w.sum(axis=1)), b.draws

    parts = _map_ordered(one, chunks, workers)
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts)


def histogram(dev: np.ndarray, bins: int = HIST_BINS, sds: float = HIST_SDS):
    sd = float(np.std(dev, ddof=1))
    half = sds * sd if sd > 0 else 1.0
    return np.histogram(dev, bins=bins, range=(-half, half))


def run_fluctuations(plan: StudyPlan, workers: int = 1) -> list[FluctuationResult]:
    if plan.mode != "fluctuations":
        raise ValueError("plan mode must be 'fluctuations'")
    plan.check_budget()
    out = []
    for t in plan.horizons:
        n = plan.n(t)
        a_hats, draws = repeated_estimates(
            plan.law, plan.d, plan.seed, np.asarray(plan.xi), t, n, plan.repetitions,
            index_base("fluctuations", t), workers,
        )
        sample = fluctuation_sample(a_hats, t)
        counts, edges = histogram(sample.deviations)
        out.append(FluctuationResult(t, n, sample, a_hats, edges, counts, draws))
    return out


@dataclass
class DiagnosticResult:
    t: int
    n: int
    tail: dict
    exp_moment: float
    lam: float
    pcurve: dict
    rng_draws: int


def p_hat_curve(law, d, seed, sizes=PCURVE_SIZES, repetitions=100, start=None):
    """|p_hat_n - 1| for each n in sizes over independent repetitions, shape (reps, len(sizes))."""
    ep = law.mean_site_weight(d)
    start = index_base("pcurve", 1) if start is None else start
    out = np.empty((repetitions, len(sizes)))
    stride = sum(sizes)
    for r in range(repetitions):
        lo = start + r * stride
        for k, n in enumerate(sizes):
            w = origin_weights(law, d, seed, np.arange(lo, lo + n, dtype=np.uint64))
            out[r, k] = abs(w.mean() / ep - 1.0)
            lo += n
    return out


def run_diagnostics(plan: StudyPlan, workers: int = 1) -> list[DiagnosticResult]:
    if plan.mode != "diagnostics":
        raise ValueError("plan mode must be 'diagnostics'")
    plan.check_budget()
    curve = p_hat_curve(plan.law, plan.d, plan.seed, repetitions=plan.repetitions)
    pc = {
        "sizes": list(PCURVE_SIZES),
        "mean_abs_dev": curve.mean(axis=0).tolist(),
        "q95_abs_dev": np.quantile(curve, 0.95, axis=0).tolist(),
        "frac_largest_beats_smallest": float(np.mean(curve[:, -1] < curve[:, 0])),
    }
    out = []
    for t in plan.horizons:
        n = plan.n(t)
        start = index_base("diagnostics", t)

        def one(rng, t=t):
            lo, m = rng
            b = simulate_discrete(plan.law, plan.d, plan.seed, t, np.arange(lo, lo + m, dtype=np.uint64))
            r2 = np.sum(b.positions.astype(np.float64) ** 2, axis=1)
            hits = [int(np.count_nonzero(r2 >= r * r * t)) for r in TAIL_RADII]
            return hits, float(np.sum(np.exp(plan.lam * r2 / t))), b.draws

        parts = _map_ordered(one, _shards(start, n, SHARD), workers)
        hits = np.sum([p[0] for p in parts], axis=0)
        tail = {repr(r): int(h) / n for r, h in zip(TAIL_RADII, hits)}
        expm = math.fsum(p[1] for p in parts) / n
        out.append(DiagnosticResult(t, n, tail, expm, plan.lam, pc, sum(p[2] for p in parts)))
    return out


# output files ---------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _header(fh, plan: StudyPlan, config: dict | None):
    fh.write("# plan: " + json.dumps(plan.to_dict(), sort_keys=True) + "\n")
    if config is not None:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")


def write_sweep_csv(records: Sequence[StudyRecord], plan: StudyPlan, path, config=None) -> None:
    """Record columns minus wall-clock time, which goes to the metadata file."""
    with open(path, "w", newline="") as fh:
        _header(fh, plan, config)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in RECORD_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows))


def write_fit_json(fit: RateFit, plan: StudyPlan, path, config=None) -> None:
    with open(path, "w") as fh:
        fh.write(_dump({"fit": asdict(fit), "plan": plan.to_dict(), "config": config}) + "\n")


def write_fluct_csv(results: Sequence[FluctuationResult], plan: StudyPlan, path, config=None) -> None:
    with open(path, "w", newline="") as fh:
        _header(fh, plan, config)
        for r in results:
            m = r.sample.summary()
            m.update(n=r.n, clt_scale=r.clt_scale, rng_draws=r.rng_draws)
            fh.write("# moments: " + json.dumps(m, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "bin_lo", "bin_hi", "count"])
        for r in results:
            for lo, hi, c in zip(r.bin_edges[:-1], r.bin_edges[1:], r.counts):
                w.writerow([r.t, repr(float(lo)), repr(float(hi)), int(c)])


def write_diag_json(results: Sequence[DiagnosticResult], plan: StudyPlan, path, config=None) -> None:
    with open(path, "w") as fh:
        fh.write(_dump({"diagnostics": [asdict(r) for r in results], "plan": plan.to_dict(),
                        "config": config}) + "\n")


def write_meta_json(path, timings: dict, extra: dict | None = None) -> None:
    """Non-reproducible fields (timestamps, wall-clock) live here only."""
    data = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "timing": timings}
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        fh.write(_dump(data) + "\n")
