import math

import numpy as np
import pytest

from kpplab import analysis, spde
from kpplab.measure import ReproductionMeasure, split
from kpplab.randomness import Skeleton, StreamKey, sample_skeleton
from kpplab.serialize import dumps

M = ReproductionMeasure.from_atoms


class TestFits:
    def test_exact_exponential(self):
        t = np.linspace(0, 10, 101)
        rep = analysis.fit_growth(t, np.exp(2 * t), target=2.0)
        assert rep.estimate == pytest.approx(2.0, abs=1e-12)
        assert rep.stderr < 1e-10 and rep.verdict
        assert rep.window == (pytest.approx(10 / 3), 10.0)

    def test_too_few_samples(self):
        t = np.linspace(0, 10, 11)
        with pytest.raises(analysis.AnalysisError):
            analysis.fit_growth(t, np.exp(t), window=(9.0, 10.0))

    def test_verdict_kinds(self):
        t = np.linspace(0, 30, 301)
        noise = 0.05 * StreamKey(0).generator().standard_normal(t.size)
        c = np.exp(0.8 * t + noise)
        assert analysis.fit_growth(t, c, target=1.0, kind="below").verdict
        assert not analysis.fit_growth(t, c, target=0.8, kind="below").verdict
        assert analysis.fit_growth(t, c, target=0.8, kind="at_most").verdict
        with pytest.raises(analysis.AnalysisError):
            analysis.fit_growth(t, c, target=1.0, kind="sideways")

    def test_report_invariants(self):
        with pytest.raises(analysis.AnalysisError):
            analysis.RateReport(1.0, 0.1, (2.0, 1.0), 1.0, "x", True)
        with pytest.raises(analysis.AnalysisError):
            analysis.RateReport(1.0, -0.1, (0.0, 1.0), 1.0, "x", True)

    def test_linear_front(self):
        t = np.linspace(0, 9, 91)
        rep = analysis.fit_front_speed(t, 3 * t + 1, target=3.0)
        assert rep.speed == pytest.approx(3.0, abs=1e-12) and rep.verdict

    def test_front_sentinel(self):
        t = np.linspace(0, 9, 91)
        x = 3 * t
        x[80] = -math.inf
        with pytest.raises(analysis.AnalysisError):
            analysis.fit_front_speed(t, x, target=3.0)

    def test_speed_report_carries_both_targets(self):
        R = M(0.0, [(1.0, 1.0)])
        t = np.linspace(0, 30, 301)
        tr = spde.Trajectory(t, {0.25: 1.2 * t, 0.5: 1.2 * t - 1, 0.75: 1.2 * t - 2}, t, [], None, theta=0.5)
        rep = analysis.speed_report_for(tr, R, rel_tol=0.15, upper=1.35)
        assert rep.target == pytest.approx(math.sqrt(2 * math.log(2)))
        assert rep.jensen_bound == pytest.approx(math.sqrt(2))
        assert rep.theta_stable and rep.verdict
        assert set(rep.theta_speeds) == {"0.25", "0.5", "0.75"}

    def test_growth_reports_targets(self):
        t = np.linspace(0, 30, 301)
        reps = analysis.growth_reports(t, np.exp(math.log(1.5) / 0.5 * t), M(0.0, [(0.5, 1.0)]), 0.25)
        assert [r.target_name for r in reps] == ["s^2/2", "c_delta", "annealed r"]
        assert all(r.verdict for r in reps)


class TestDuality:
    cfg = spde.SpdeConfig(L=10, dx=0.05)

    def test_u0_zero(self):
        rep = analysis.duality_check(M(0.3, [(0.5, 0.3)]), 0.25, [0.0, 1.0], spde.ConstantProfile(0.0),
                                     1.0, 50, StreamKey(0), self.cfg)
        assert rep.lhs_mean == 1.0 and rep.rhs_mean == 1.0 and rep.verdict

    def test_u0_one(self):
        rep = analysis.duality_check(M(0.3, [(0.5, 0.3)]), 0.25, [0.0], spde.ConstantProfile(1.0),
                                     1.0, 50, StreamKey(0), self.cfg)
        assert rep.lhs_mean == 0.0 and rep.rhs_mean == 0.0 and rep.verdict

    def test_heat_oracle(self):
        rep = analysis.duality_check(M(), 0.5, [0.4], spde.RampProfile(-1, 1), 1.0, 4000, StreamKey(1), self.cfg)
        exact = 1.0 - float(analysis.heat_ramp_expectation(0.4, -1, 1, 1.0))
        assert abs(rep.lhs_mean - exact) < 1e-4
        assert abs(rep.rhs_mean - exact) <= 3 * rep.rhs_stderr
        assert rep.verdict

    def test_heat_ramp_expectation_quadrature(self):
        from scipy.integrate import quad

        def integrand(z):
            return spde.ramp_profile(0.3 + z, -1, 2) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi)

        val = quad(integrand, -12, 12, points=[-1.3, 1.7])[0]
        assert float(analysis.heat_ramp_expectation(0.3, -1, 2, 1.0)) == pytest.approx(val, abs=1e-10)

    def test_symmetric_in_points(self):
        R = M(0.3, [(0.5, 0.3)])
        sk = sample_skeleton(split(R, 0.25), 1.0, StreamKey(2))
        a = analysis.duality_check(R, 0.25, [0.0, 1.0], spde.RampProfile(-1, 1), 1.0, 5, StreamKey(3), self.cfg, skeleton=sk)
        b = analysis.duality_check(R, 0.25, [1.0, 0.0], spde.RampProfile(-1, 1), 1.0, 5, StreamKey(3), self.cfg, skeleton=sk)
        assert a.lhs_mean == pytest.approx(b.lhs_mean, abs=1e-15)

    def test_with_small_jumps(self):
        # random conditional equation: both sides are Monte Carlo averages
        R = M(0.3, [(0.1, 0.05), (0.5, 0.3)])
        rep = analysis.duality_check(R, 0.25, [0.0, 0.5], spde.RampProfile(-1, 1), 1.0, 2000, StreamKey(7), self.cfg)
        assert rep.n_lhs == 2000 and rep.lhs_stderr > 0
        assert rep.verdict

    def test_too_many_points(self):
        with pytest.raises(analysis.AnalysisError):
            analysis.duality_check(M(1.0), 0.5, [0, 1, 2, 3, 4], spde.RampProfile(-1, 1), 1.0, 5,
                                   StreamKey(0), self.cfg)

    def test_needs_two_replicas(self):
        with pytest.raises(analysis.AnalysisError):
            analysis.duality_check(M(1.0), 0.5, [0.0], spde.RampProfile(-1, 1), 1.0, 1, StreamKey(0), self.cfg)

    def test_point_near_boundary(self):
        with pytest.raises(analysis.AnalysisError):
            analysis.duality_check(M(1.0), 0.5, [9.5], spde.RampProfile(-1, 1), 1.0, 5, StreamKey(0), self.cfg)

    def test_cap_is_explicit_failure(self):
        from kpplab.cbbm import CapExceeded

        with pytest.raises(CapExceeded):
            analysis.duality_check(M(3.0), 0.5, [0.0], spde.RampProfile(-1, 1), 3.0, 5, StreamKey(0),
                                   self.cfg, cap=50)


class TestTail:
    def test_huge_lambda_no_exceedances(self):
        S = np.zeros((100, 3))
        I = np.ones((100, 3))
        rep = analysis.tail_bound_check(S, I, 50.0, [5.0, 10.0, 15.0], 0.81)
        assert rep.frequency == [0.0, 0.0, 0.0] and rep.bound_respected

    def test_bound_violation_detected(self):
        S = np.full((100, 3), 100.0)
        I = np.ones((100, 3))
        rep = analysis.tail_bound_check(S, I, 2.0, [5.0, 10.0, 15.0], 0.81)
        assert not rep.bound_respected

    def test_trend(self):
        assert analysis.trend([3, 2, 1], "decreasing")
        assert not analysis.trend([3, 2, 2], "decreasing")
        assert analysis.trend([0.1, 0.5, 0.9], "increasing")

    def test_dual_probabilities_match_cbbm(self):
        # exact quenched tail from the dual equation against direct particle simulation
        R = M(0.0, [(0.5, 1.0)])
        sm = split(R, 0.25)
        sk = sample_skeleton(sm, 3.0, StreamKey(4))
        lam, times = 1.2, [1.5, 3.0]
        cfg = spde.SpdeConfig(L=15, dx=0.05)
        P = analysis.tail_probabilities_dual(R, 0.25, sk, [lam], times, cfg)
        from kpplab import cbbm

        n = 4000
        hits = np.zeros(2)
        for i in range(n):
            res = cbbm.run([0.0], sm, sk, 3.0, StreamKey(5).fork("r", i), mode="positions", checkpoints=times)
            hits += res.rightmost > lam * np.array(times)
        freq = hits / n
        se = np.sqrt(P[0] * (1 - P[0]) / n)
        assert np.all(np.abs(freq - P[0]) <= 3 * se + 2e-3)

    def test_dual_probabilities_below_many_to_one(self):
        R = M(0.0, [(0.5, 1.0)])
        sk = sample_skeleton(split(R, 0.25), 10.0, StreamKey(6))
        cfg = spde.SpdeConfig(L=25, dx=0.05)
        times = [4.0, 7.0, 10.0]
        lam = 1.1 * math.sqrt(2 * math.log(1.5) / 0.5)
        P = analysis.tail_probabilities_dual(R, 0.25, sk, [lam], times, cfg)
        expected = [analysis.quenched_mean_count(R, 0.25, sk, t) for t in times]
        rep = analysis.tail_report_from_probabilities(P[0], lam, times, expected, 0.81)
        assert rep.bound_respected


class TestMartingale:
    def test_n0_exact_and_needs_replicas(self):
        M_ = np.ones((100, 3))
        rep = analysis.martingale_mean_test(M_)
        assert rep.means[0] == 1.0 and rep.verdict
        with pytest.raises(analysis.AnalysisError):
            analysis.martingale_mean_test(np.ones((99, 3)))

    def test_vacuous(self):
        M_ = np.full((100, 4), np.nan)
        M_[:, 0] = 1.0
        rep = analysis.martingale_mean_test(M_)
        assert rep.skipped

    def test_stopped_series(self):
        out = analysis.stopped_series([1.0, 0.8, np.nan, np.nan])
        assert out.tolist() == [1.0, 0.8, 0.8, 0.8]

    def test_detects_bias(self):
        g = StreamKey(0).generator()
        M_ = np.column_stack([np.ones(400), 1.2 + 0.1 * g.standard_normal(400)])
        assert not analysis.martingale_mean_test(M_).verdict


class TestLln:
    def test_empty_plus(self):
        R = M(1.0, [(0.1, 1.0)])
        rep = analysis.lln_check(Skeleton.empty(200.0, 0.25), R, 0.25)
        assert rep.value == 0.0 and rep.target == 0.0 and rep.verdict

    def test_flag_empty(self):
        rep = analysis.lln_check(Skeleton.empty(200.0, 0.25), M(0.0, [(0.5, 1.0)]), 0.25)
        assert rep.flagged_empty and not rep.verdict

    def test_eps_target(self):
        R = M(0.0, [(0.5, 1.0)])
        sk = sample_skeleton(split(R, 0.25), 200.0, StreamKey(0))
        assert analysis.lln_check(sk, R, 0.25, 0.1).target == pytest.approx(0.9400073, abs=1e-7)

    def test_clt_tolerance_coverage(self):
        R = M(0.0, [(0.5, 1.0)])
        sm = split(R, 0.25)
        ok = [analysis.lln_check(sample_skeleton(sm, 200.0, StreamKey(1).fork("s", i)), R, 0.25).verdict
              for i in range(200)]
        assert sum(ok) >= 190


def test_reports_serialise():
    t = np.linspace(0, 10, 101)
    text = dumps(analysis.fit_growth(t, np.exp(t), target=1.0))
    assert '"estimate": 1' in text and '"target_name": "s^2/2"' in text
