import json
import math

import numpy as np
import pytest

from rwre.env_field import ConductanceLaw, EnvironmentField
from rwre.oracle import exact_distribution
from rwre.study import (
    TABLE1_ERROR,
    TABLE1_HORIZONS,
    TABLE1_K,
    BudgetExceededError,
    StudyPlan,
    fit_rate,
    index_base,
    p_hat_curve,
    read_sweep_csv,
    reference_ahom,
    run_diagnostics,
    run_fluctuations,
    run_sweep,
    write_diag_json,
    write_fit_json,
    write_fluct_csv,
    write_sweep_csv,
)
from rwre.walker import draws_per_discrete_walk

LAW = ConductanceLaw.two_point(1, 4, 0.5)
CONST = ConductanceLaw.constant(2.0)

# OLS slope of log(C log t / t) on log t over the table horizons, from scipy.stats.linregress
LOG_OVER_T_SLOPE = -0.7565506174775002
# same fit over the seven reference-table (t, error) pairs
TABLE1_SLOPE = -0.851399137336278


class TestPlan:
    def test_table1_scaling(self):
        p = StudyPlan.table1(LAW, 1, scale=0.01)
        assert p.horizons == TABLE1_HORIZONS
        assert [p.K(t) for t in p.horizons] == [1000, 30, 30, 10, 5, 1, 1]
        assert p.n(40) == 30 * 1600
        full = StudyPlan.table1(LAW, 1)
        assert [full.K(t) for t in TABLE1_HORIZONS] == list(TABLE1_K)

    def test_walks_override(self):
        p = StudyPlan(LAW, 1, horizons=(5, 9), replication={}, walks=100)
        assert p.n(5) == p.n(9) == 100

    @pytest.mark.parametrize("kw", [
        dict(horizons=(10, 5)),
        dict(horizons=()),
        dict(horizons=(0,)),
        dict(horizons=(3,), replication={3: 0}),
        dict(mode="other"),
        dict(xi=(1.0, 0.0, 0.0)),
        dict(xi=(0.0, 0.0)),
        dict(seed=-1),
        dict(horizons=(4,), replication={}, walks=1),
    ])
    def test_invalid(self, kw):
        base = dict(seed=1, horizons=(4,), replication={4: 1})
        base.update(kw)
        with pytest.raises(ValueError):
            StudyPlan(LAW, **base)

    def test_invalid_scale_and_horizon(self):
        with pytest.raises(ValueError):
            StudyPlan.table1(LAW, 1, scale=0)
        with pytest.raises(ValueError):
            StudyPlan.table1(LAW, 1, horizons=(11,))

    def test_budget(self):
        p = StudyPlan(LAW, 1, horizons=(10,), replication={10: 1}, budget_draws=1000)
        assert p.projected_draws() == 100 * draws_per_discrete_walk(10, 2)
        with pytest.raises(BudgetExceededError):
            run_sweep(p)

    def test_to_dict_json(self):
        p = StudyPlan.table1(LAW, "0x10", scale=0.5, horizons=(10, 20))
        d = json.loads(json.dumps(p.to_dict()))
        assert d["seed"] == 16 and d["replication"] == {"10": 50000, "20": 1500}

    def test_namespaces_disjoint(self):
        assert index_base("sweep", 10) != index_base("fluctuations", 10)
        assert index_base("sweep", 10) + 10**8 < index_base("sweep", 11)


def test_reference_values():
    assert reference_ahom(LAW, 2) == 2.0
    assert reference_ahom(CONST, 3) == 2.0
    assert reference_ahom(ConductanceLaw.two_point(1, 4, 0.3), 2) is None
    assert reference_ahom(LAW, 3) is None
    assert reference_ahom(ConductanceLaw.uniform(1, 3), 2) is None


class TestFitRate:
    def test_power_law(self):
        f = fit_rate([(t, 3.0 / t) for t in (10, 20, 40, 80)])
        assert f.slope == pytest.approx(-1.0, abs=1e-12)
        assert f.intercept == pytest.approx(math.log(3.0))
        assert f.residual_se == pytest.approx(0.0, abs=1e-12)

    def test_log_correction(self):
        f = fit_rate([(t, 2.0 * math.log(t) / t) for t in TABLE1_HORIZONS])
        assert f.slope == pytest.approx(LOG_OVER_T_SLOPE, abs=1e-12)

    def test_reference_table(self):
        f = fit_rate(list(zip(TABLE1_HORIZONS, TABLE1_ERROR)))
        assert f.slope == pytest.approx(TABLE1_SLOPE, abs=1e-12)
        assert round(f.slope, 2) == -0.85

    @pytest.mark.parametrize("pts", [[(10, 0.1), (20, 0.05)], [(10, 0.1), (20, 0.0), (40, 0.01)],
                                     [(10, 0.1), (20, None), (40, 0.01)]])
    def test_rejects(self, pts):
        with pytest.raises(ValueError):
            fit_rate(pts)


class TestSweep:
    def test_constant_law_error_within_ci(self):
        plan = StudyPlan(CONST, 3, horizons=(5, 10, 20), replication={5: 400, 10: 100, 20: 25})
        for r in run_sweep(plan):
            assert r.systematic_error <= 3 * r.ahom_ci_halfwidth
            assert r.n == plan.n(r.t)

    def test_workers_identical(self):
        plan = StudyPlan(LAW, 5, horizons=(6, 12), replication={6: 200, 12: 60})
        a = run_sweep(plan, workers=1, shard_size=1000)
        b = run_sweep(plan, workers=4, shard_size=1000)
        strip = lambda rs: [(r.t, r.a_hat, r.p_hat, r.ci_halfwidth, r.rng_draws) for r in rs]
        assert strip(a) == strip(b)

    def test_shard_size_only_rounds(self):
        plan = StudyPlan(LAW, 5, horizons=(6,), replication={6: 200})
        a, = run_sweep(plan, shard_size=1000)
        b, = run_sweep(plan, shard_size=7000)
        assert a.a_hat == pytest.approx(b.a_hat, rel=1e-13)

    def test_draws(self):
        plan = StudyPlan(LAW, 5, horizons=(8, 16), replication={8: 50, 16: 10})
        for r in run_sweep(plan):
            assert r.rng_draws == r.n * draws_per_discrete_walk(r.t, 2)
            assert 0.5 <= r.rng_draws / (4 * r.t**3 * r.K) <= 2

    def test_csv_roundtrip(self, tmp_path):
        plan = StudyPlan(LAW, 5, horizons=(4, 8), replication={4: 20, 8: 5})
        recs = run_sweep(plan)
        path = tmp_path / "s.csv"
        write_sweep_csv(recs, plan, path, config={"law": "x"})
        text = path.read_text().splitlines()
        assert text[0].startswith("# plan: ") and json.loads(text[0][8:]) == plan.to_dict()
        assert text[1] == '# config: {"law": "x"}'
        rows = read_sweep_csv(path)
        assert [float(r["a_hat"]) for r in rows] == [r.a_hat for r in recs]
        assert "wall_seconds" not in rows[0]
        write_fit_json(fit_rate([(1, 1), (2, 0.5), (4, 0.25)]), plan, tmp_path / "f.json")
        assert json.loads((tmp_path / "f.json").read_text())["fit"]["slope"] == pytest.approx(-1)

    def test_wrong_mode(self):
        with pytest.raises(ValueError):
            run_sweep(StudyPlan(LAW, 1, horizons=(4,), replication={4: 1}, mode="diagnostics"))


def exact_q_moments(t):
    k = exact_distribution(EnvironmentField(CONST, 0), t, 2)
    z2 = k.coords()[..., 0].astype(float) ** 2
    p = k.probs.astype(float)
    return float(np.sum(p * z2)), float(np.sum(p * z2 * z2))


class TestFluctuations:
    def test_constant_sd_matches_exact(self, tmp_path):
        t, n = 8, 50
        m1, m2 = exact_q_moments(t)
        plan = StudyPlan(CONST, 9, horizons=(t,), replication={}, walks=n, mode="fluctuations", repetitions=2000)
        r, = run_fluctuations(plan)
        assert r.sd == pytest.approx(math.sqrt((m2 - m1 * m1) / n), rel=0.1)
        assert r.counts.sum() == 2000 and len(r.bin_edges) == len(r.counts) + 1
        write_fluct_csv([r], plan, tmp_path / "fl.csv")
        lines = (tmp_path / "fl.csv").read_text().splitlines()
        assert lines[1].startswith("# moments: ") and lines[2] == "t,bin_lo,bin_hi,count"

    def test_sd_halves_with_quadrupled_n(self):
        sds = []
        for n in (40, 80):
            plan = StudyPlan(LAW, 10, horizons=(6,), replication={}, walks=n, mode="fluctuations", repetitions=3000)
            sds.append(run_fluctuations(plan)[0].sd)
        assert sds[0] / sds[1] == pytest.approx(math.sqrt(2), rel=0.1)


class TestDiagnostics:
    def test_tail_matches_exact_kernel(self, tmp_path):
        t, n = 12, 10**5
        plan = StudyPlan(CONST, 4, horizons=(t,), replication={}, walks=n, mode="diagnostics", repetitions=20)
        r, = run_diagnostics(plan)
        k = exact_distribution(EnvironmentField(CONST, 0), t, 2)
        assert r.tail["0.0"] == 1.0
        for key, mc in r.tail.items():
            p = k.tail(float(key))
            assert abs(mc - p) <= 5 * math.sqrt(p * (1 - p) / n) + 1e-12
        c = k.coords().astype(float)
        expm = float(np.sum(k.probs.astype(float) * np.exp(0.05 * np.sum(c * c, axis=-1) / t)))
        assert r.exp_moment == pytest.approx(expm, rel=0.01)
        write_diag_json([r], plan, tmp_path / "d.json")
        data = json.loads((tmp_path / "d.json").read_text())
        assert data["plan"] == plan.to_dict() and data["diagnostics"][0]["t"] == t

    def test_p_hat_curve_shrinks(self):
        curve = p_hat_curve(LAW, 2, 7, repetitions=100)
        assert curve.shape == (100, 3)
        assert np.mean(curve[:, 2] < curve[:, 0]) >= 0.95


@pytest.mark.slow
class TestReferenceRows:
    @pytest.mark.xfail(strict=True, reason="measured t=10 error is 0.096 +/- 0.009, table gives 0.127")
    def test_t10(self):
        r, = run_sweep(StudyPlan.table1(LAW, 2024, horizons=(10,)))
        assert abs(r.systematic_error - 1.27e-01) <= 3 * r.ahom_ci_halfwidth

    def test_t80(self):
        r, = run_sweep(StudyPlan.table1(LAW, 2024, horizons=(80,)))
        assert abs(r.systematic_error - 2.46e-02) <= 3 * r.ahom_ci_halfwidth
