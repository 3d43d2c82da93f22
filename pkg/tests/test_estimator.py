import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwre.env_field import ConductanceLaw, origin_weights
from rwre.estimator import (
    CSV_FIELDS,
    EstimatorState,
    HorizonMismatchError,
    accumulate,
    estimate_matrix,
    fluctuation_sample,
    merge,
    report,
    state_from_batch,
    unit_direction,
)
from rwre.walker import WalkOutcome, simulate_continuous, simulate_discrete

TWO_POINT = ConductanceLaw.two_point(1, 4, 0.5)
E1 = (1.0, 0.0)


def outcome(w, z, t=4):
    return WalkOutcome((z, 0), float(w), t, 0)


def acc_all(pairs, t=4):
    s = EstimatorState(t)
    for w, z in pairs:
        s = accumulate(s, outcome(w, z, t), E1)
    return s


class TestAccumulate:
    def test_single(self):
        s = acc_all([(8, 2)])
        assert (s.total("wq"), s.total("w"), s.n) == (32.0, 8.0, 1)

    def test_two_walks_by_hand(self):
        s = acc_all([(8, 2), (12, -1)])
        assert report(s, TWO_POINT, 2).a_hat == pytest.approx(0.55, abs=1e-15)

    def test_order(self):
        assert acc_all([(8, 2), (12, -1)]) == acc_all([(12, -1), (8, 2)])

    def test_horizon_mismatch(self):
        with pytest.raises(HorizonMismatchError):
            accumulate(EstimatorState(5), outcome(8, 2, t=4), E1)
        with pytest.raises(HorizonMismatchError):
            merge(EstimatorState(5), EstimatorState(4))

    def test_batch_equals_single(self):
        pairs = [(8, 2), (12, -1), (10, 0), (16, 3)]
        batch = EstimatorState(4).accumulate_batch([p[0] for p in pairs], [p[1] for p in pairs])
        single = acc_all(pairs)
        for name in ("w", "wq", "ww", "wqwq", "wwq", "z", "q", "zq", "qq"):
            assert batch.total(name) == single.total(name)

    def test_compensated(self):
        s = EstimatorState(1)
        for v in (1e16, 1.0, -1e16):
            s = s.accumulate_batch([v], [0.0])
        assert s.total("w") == 1.0


pairs_strategy = st.lists(st.tuples(st.integers(4, 16), st.integers(-40, 40)), min_size=0, max_size=30)


class TestMerge:
    @settings(max_examples=60, deadline=None)
    @given(a=pairs_strategy, b=pairs_strategy, c=pairs_strategy)
    def test_monoid(self, a, b, c):
        sa, sb, sc = acc_all(a), acc_all(b), acc_all(c)
        assert merge(sa, EstimatorState(4)) == sa
        assert merge(sa, sb) == merge(sb, sa)
        assert merge(merge(sa, sb), sc) == merge(sa, merge(sb, sc))
        whole = acc_all(a + b + c)
        split = merge(merge(sa, sb), sc)
        assert split.n == whole.n
        for name in ("w", "wq", "qq"):
            assert split.total(name) == whole.total(name)

    @settings(max_examples=30, deadline=None)
    @given(w=st.lists(st.floats(4, 16), min_size=2, max_size=50), seed=st.integers(0, 2**32))
    def test_float_merge_close(self, w, seed):
        z = np.random.default_rng(seed).normal(size=len(w)) * 5
        k = len(w) // 2
        whole = EstimatorState(3).accumulate_batch(w, z)
        parts = EstimatorState(3).accumulate_batch(w[:k], z[:k]).merge(EstimatorState(3).accumulate_batch(w[k:], z[k:]))
        assert parts.total("wq") == pytest.approx(whole.total("wq"), rel=1e-14)


class TestReport:
    def test_needs_two(self):
        with pytest.raises(ValueError):
            report(acc_all([(8, 2)]), TWO_POINT, 2)

    @settings(max_examples=50, deadline=None)
    @given(pairs=st.lists(st.tuples(st.integers(4, 16), st.integers(-4, 4)), min_size=2, max_size=30))
    def test_bounds(self, pairs):
        r = report(acc_all(pairs), TWO_POINT, 2)
        assert 0 <= r.a_hat <= 4
        assert 4 / 10 <= r.p_hat <= 16 / 10
        assert r.ahom_direction == 5 * r.a_hat and r.ci_halfwidth >= 0

    def test_serialization(self):
        r = report(acc_all([(8, 2), (12, -1)]), TWO_POINT, 2, seed=7)
        assert list(json.loads(r.to_json())) == list(CSV_FIELDS)
        assert r.csv_row() == [4, 2, r.a_hat, r.p_hat, r.ahom_direction, r.ci_halfwidth, 7]

    def test_constant_law(self):
        c, t, n = 3.0, 12, 10**5
        law = ConductanceLaw.constant(c)
        r = report(state_from_batch(simulate_discrete(law, 2, 1, t, np.arange(n)), E1), law, 2)
        se = r.ci_halfwidth / 1.959963984540054
        assert abs(r.a_hat - 0.5) < 5 * se
        assert abs(r.ahom_direction - c) < 5 * se * 2 * c

    def test_ci_covers_truth_mostly(self):
        # constant environment: the target 1/2 is known exactly at every t
        law = ConductanceLaw.constant(1.0)
        hits = 0
        for k in range(200):
            b = simulate_discrete(law, 2, 1000 + k, 6, np.arange(2000))
            r = report(state_from_batch(b, E1), law, 2)
            hits += abs(r.a_hat - 0.5) <= r.ci_halfwidth
        assert 0.90 <= hits / 200 <= 0.99


def test_unit_direction():
    assert np.allclose(unit_direction([3, 4]), [0.6, 0.8])
    with pytest.raises(ValueError):
        unit_direction([0, 0])


class TestScaleEquivariance:
    def test_discrete_invariant(self):
        t, ids = 30, np.arange(5000)
        b1 = simulate_discrete(TWO_POINT, 2, 4, t, ids)
        b2 = simulate_discrete(ConductanceLaw.two_point(2, 8, 0.5), 2, 4, t, ids)
        assert np.array_equal(b1.positions, b2.positions)
        r1 = report(state_from_batch(b1, E1), TWO_POINT, 2)
        r2 = report(state_from_batch(b2, E1), ConductanceLaw.two_point(2, 8, 0.5), 2)
        assert r1.a_hat == r2.a_hat
        b3 = simulate_discrete(ConductanceLaw.two_point(3, 12, 0.5), 2, 4, t, ids)
        assert np.mean(np.all(b1.positions == b3.positions, axis=1)) > 0.999

    def test_continuous_time_change(self):
        ids = np.arange(2000)
        slow = simulate_continuous(TWO_POINT, 2, 6, 20.0, ids)
        fast = simulate_continuous(ConductanceLaw.two_point(2, 8, 0.5), 2, 6, 10.0, ids)
        assert np.array_equal(slow.positions, fast.positions)
        rate_slow = np.mean(slow.positions[:, 0] ** 2.0) / 20.0
        rate_fast = np.mean(fast.positions[:, 0] ** 2.0) / 10.0
        assert rate_fast == pytest.approx(2 * rate_slow, rel=1e-12)


def test_p_hat_concentrates():
    n, reps = 10**4, 200
    ep, var = TWO_POINT.mean_site_weight(2), TWO_POINT.site_weight_variance(2)
    bound = 5 * math.sqrt(var / n) / ep
    ok = 0
    for r in range(reps):
        w = origin_weights(TWO_POINT, 2, 99, np.arange(r * n, (r + 1) * n))
        ok += abs(w.mean() / ep - 1) < bound
    assert ok / reps >= 0.99


class TestFluctuationSample:
    def test_degenerate(self):
        s = fluctuation_sample([0.4] * 10, t=10)
        assert np.all(s.deviations == 0)

    def test_two(self):
        s = fluctuation_sample([0.3, 0.5], t=10)
        assert np.allclose(s.deviations, [-1.0, 1.0], atol=1e-14)
        assert s.pooled_mean == pytest.approx(0.4)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            fluctuation_sample([0.3], t=10)

    def test_gaussian_moments(self):
        a = np.random.default_rng(0).normal(0.4, 0.01, size=10**5)
        s = fluctuation_sample(a, 10)
        assert abs(s.skewness) < 0.05 and abs(s.excess_kurtosis) < 0.1
        assert s.variance == pytest.approx(0.01, rel=0.02)


class TestMatrix:
    def test_constant_is_scalar(self):
        law = ConductanceLaw.constant(2.0)
        b = simulate_discrete(law, 2, 12, 10, np.arange(10**5))
        a = estimate_matrix(b, law, 2)
        assert np.allclose(a, 2.0 * np.eye(2), atol=0.05)

    def test_polarization_identity(self):
        b = simulate_discrete(TWO_POINT, 2, 13, 10, np.arange(10**4))
        a = estimate_matrix(b, TWO_POINT, 2)
        pos = b.positions.astype(float)
        w = b.origin_weights
        direct = 5.0 * (pos.T * w) @ pos / (10 * w.sum())
        assert np.allclose(a, direct, rtol=1e-12, atol=1e-12)
        assert a[0, 1] == a[1, 0]
