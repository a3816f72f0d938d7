import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mc_staircase_decomposition
from seqmon.boundaries import (
    DEFAULT_METHODS,
    ONE_SIDED,
    TWO_SIDED,
    ConstantBoundary,
    MethodSpec,
    StaircaseBoundary,
    StaircasePlan,
    TestConfig,
    bonferroni_threshold,
    boundary_from_dict,
    constant_boundary,
    equal_periods,
    fdr_bound,
    gavi_boundary,
    msprt_log_likelihood_ratio,
    msprt_p_value,
    msprt_threshold,
    normalize_sidedness,
    staircase_boundaries,
    threshold_path,
)
from seqmon.errors import ConvergenceError, DomainError, UsageError
from seqmon.statdist import normal_quantile

Z975 = normal_quantile(0.975)


class TestConfigValidation:
    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5, float("nan")])
    def test_alpha_range(self, alpha):
        with pytest.raises(DomainError):
            TestConfig(alpha, "one", 10, 1.0)

    def test_horizon_and_variance(self):
        with pytest.raises(DomainError):
            TestConfig(0.05, "one", 0, 1.0)
        with pytest.raises(DomainError):
            TestConfig(0.05, "one", 10, 0.0)

    @pytest.mark.parametrize("text", ["one", "one_sided", "one-sided", "ONE"])
    def test_sidedness_aliases(self, text):
        assert normalize_sidedness(text) == ONE_SIDED

    def test_unknown_sidedness(self):
        with pytest.raises(DomainError):
            normalize_sidedness("three")


class TestConstantBoundary:
    def test_one_sided(self):
        b = constant_boundary(TestConfig(0.05, "one", 500, 2.0))
        assert b.threshold == pytest.approx(61.979, abs=1e-3)
        assert b.threshold == pytest.approx(1.959964 * math.sqrt(1000), abs=1e-3)

    def test_two_sided(self):
        b = constant_boundary(TestConfig(0.05, "two", 500, 2.0))
        assert b.threshold == pytest.approx(70.879, abs=1e-3)

    def test_alpha_near_one(self):
        b = constant_boundary(TestConfig(1 - 1e-15, "one", 1, 1.0))
        assert b.threshold == pytest.approx(0.0, abs=1e-6)

    @given(st.integers(1, 10**6), st.floats(1e-3, 1e3))
    def test_sqrt_scaling(self, n, v):
        one = constant_boundary(TestConfig(0.05, "one", n, v)).threshold
        two = constant_boundary(TestConfig(0.05, "one", 2 * n, v)).threshold
        assert two == pytest.approx(math.sqrt(2) * one, rel=1e-12)

    def test_dict_round_trip(self):
        b = constant_boundary(TestConfig(0.05, "two", 500, 2.0))
        assert boundary_from_dict(b.to_dict()) == b

    def test_threshold_outside_horizon(self):
        b = ConstantBoundary(10.0, ONE_SIDED, 0.05, 5)
        assert b.threshold_at(5) == 10.0
        with pytest.raises(DomainError):
            b.threshold_at(6)


class TestFdrBound:
    def test_single_period_reduces_to_fixed_test(self):
        plan = StaircasePlan.from_period_variances([500], [1000.0])
        assert fdr_bound(plan, [Z975 * math.sqrt(1000)]) == pytest.approx(0.05, abs=1e-6)

    def test_two_periods_against_simulation(self):
        plan = StaircasePlan((1, 1), (1.0, 2.0), (1.0, 1.0))
        b = (Z975, Z975 * math.sqrt(2))
        got = fdr_bound(plan, b)
        ref, se = mc_staircase_decomposition(b, plan.cum_variances)
        assert got > 0.05
        assert abs(got - ref) <= 3 * se

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=12))
    def test_inflating_thresholds_lowers_bound(self, incr):
        plan = StaircasePlan.from_period_variances([1] * len(incr), incr)
        b = [Z975 * math.sqrt(u) for u in plan.cum_variances]
        assert fdr_bound(plan, [1.1 * x for x in b]) < fdr_bound(plan, b)

    def test_wrong_length(self):
        plan = StaircasePlan.from_period_variances([1, 1], [1.0, 1.0])
        with pytest.raises(DomainError):
            fdr_bound(plan, [1.0])


class TestStaircase:
    def test_single_period_needs_no_inflation(self):
        plan = StaircasePlan.from_event_variance([500], 2.0)
        sb = staircase_boundaries(plan, 0.05)
        assert sb.inflation_steps == 0
        assert sb.thresholds[0] == pytest.approx(constant_boundary(TestConfig(0.05, "one", 500, 2.0)).threshold)

    def test_seven_equal_periods(self):
        plan = StaircasePlan.from_event_variance(equal_periods(500, 7), 1.0)
        sb = staircase_boundaries(plan, 0.05)
        assert sb.inflation_steps >= 1
        assert fdr_bound(plan, sb.thresholds) <= 0.05
        assert sb.achieved_bound == pytest.approx(fdr_bound(plan, sb.thresholds))
        assert all(a < b for a, b in zip(sb.thresholds, sb.thresholds[1:]))

    @settings(max_examples=30, deadline=None)
    @given(
        st.lists(st.integers(1, 100), min_size=1, max_size=20),
        st.floats(0.01, 0.2),
        st.floats(0.1, 5.0),
    )
    def test_self_consistency_and_ordering(self, sizes, alpha, var):
        plan = StaircasePlan.from_event_variance(sizes, var)
        sb = staircase_boundaries(plan, alpha)
        assert fdr_bound(plan, sb.thresholds) <= alpha * (1 + 1e-12)
        z = normal_quantile(1 - alpha / 2)
        assert sb.thresholds[0] >= z * math.sqrt(plan.cum_variances[0]) - 1e-12
        assert sb.thresholds[-1] >= z * math.sqrt(plan.cum_variances[-1]) - 1e-12

    def test_iteration_cap(self):
        plan = StaircasePlan.from_event_variance(equal_periods(500, 7), 1.0, epsilon=1e-6)
        with pytest.raises(ConvergenceError):
            staircase_boundaries(plan, 0.05, max_iter=3)

    def test_plan_validation(self):
        with pytest.raises(DomainError):
            StaircasePlan((1, 1), (2.0, 1.0), (2.0, -1.0))
        with pytest.raises(DomainError):
            StaircasePlan((1,), (1.0,), (1.0,), epsilon=0.0)

    def test_equal_periods(self):
        assert equal_periods(500, 7) == [72, 72, 72, 71, 71, 71, 71]
        assert sum(equal_periods(1000, 14)) == 1000

    def test_threshold_lookup(self):
        sb = StaircaseBoundary((1.0, 2.0, 3.0), (2, 4, 6), 0.05, ONE_SIDED)
        assert [sb.threshold_at(n) for n in range(1, 7)] == [1, 1, 2, 2, 3, 3]
        assert list(sb.threshold_path()) == [1, 1, 2, 2, 3, 3]

    def test_dict_round_trip(self):
        plan = StaircasePlan.from_event_variance(equal_periods(100, 3), 2.0)
        sb = staircase_boundaries(plan, 0.05)
        again = boundary_from_dict(sb.to_dict())
        assert again.thresholds == sb.thresholds
        assert again.period_end_indices == sb.period_end_indices


class TestMsprt:
    def test_start_state(self):
        assert msprt_p_value(1.0, 0, 0.0, 2.0, 100.0) == 1.0

    def test_zero_sum_keeps_p_at_one(self):
        p = 1.0
        for n in range(1, 200):
            p = msprt_p_value(p, n, 0.0, 2.0, 25.0)
            assert p == 1.0

    def test_closed_form_at_zero(self):
        # Lambda = sqrt(phi / (phi + n)) when S = 0
        assert math.exp(msprt_log_likelihood_ratio(10, 0.0, 1.0, 5.0)) == pytest.approx(math.sqrt(5 / 15))

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=80))
    def test_p_nonincreasing(self, xs):
        p, s = 1.0, 0.0
        for n, x in enumerate(xs, 1):
            s += x
            q = msprt_p_value(p, n, s, 2.0, 11.0)
            assert q <= p
            p = q

    @settings(max_examples=50)
    @given(st.integers(1, 2000), st.floats(0.5, 3.0))
    def test_threshold_matches_p_value(self, n, frac):
        # a running sum at the threshold gives p = level; inside it gives p > level
        b = msprt_threshold(n, 2.0, 100.0, 0.05, TWO_SIDED)
        s = frac * b
        p = msprt_p_value(1.0, n, s, 2.0, 100.0)
        if frac > 1.0 + 1e-9:
            assert p < 0.05
        elif frac < 1.0 - 1e-9:
            assert p > 0.05

    def test_one_sided_uses_doubled_level(self):
        assert msprt_threshold(100, 2.0, 25.0, 0.05, ONE_SIDED) == pytest.approx(
            msprt_threshold(100, 2.0, 25.0, 0.10, TWO_SIDED)
        )


class TestGaviAndBonferroni:
    def test_gavi_increasing_in_n(self):
        b = gavi_boundary(np.arange(1, 1001), 2.0, 250.0, 0.05)
        assert np.all(np.diff(b) > 0)

    def test_gavi_tightens_with_alpha(self):
        n = np.arange(1, 501)
        assert np.all(gavi_boundary(n, 2.0, 500.0, 0.01) > gavi_boundary(n, 2.0, 500.0, 0.05))

    def test_bonferroni_single_check(self):
        assert bonferroni_threshold(0.05, 1, 500, 2.0, ONE_SIDED) == pytest.approx(
            normal_quantile(0.95) * math.sqrt(1000)
        )
        assert bonferroni_threshold(0.05, 1, 500, 2.0, TWO_SIDED) == pytest.approx(Z975 * math.sqrt(1000))

    def test_bonferroni_tightens_with_alpha(self):
        assert bonferroni_threshold(0.01, 14, 100, 2.0) > bonferroni_threshold(0.05, 14, 100, 2.0)

    def test_bonferroni_rejects_bad_count(self):
        with pytest.raises(DomainError):
            bonferroni_threshold(0.05, 0, 10, 1.0)


class TestMethods:
    @pytest.mark.parametrize("name", DEFAULT_METHODS)
    def test_round_trip_names(self, name):
        assert MethodSpec.parse(name).name == name

    def test_phi_alias(self):
        assert MethodSpec.parse("msprtphi50") == MethodSpec("msprt", 50.0)

    def test_unknown_lists_valid(self):
        with pytest.raises(UsageError, match="pyeast<K>"):
            MethodSpec.parse("obrien")

    @pytest.mark.parametrize("name", DEFAULT_METHODS)
    def test_paths_positive(self, name):
        thr = threshold_path(name, 200, 2.0, 0.05)
        assert thr.shape == (200,)
        assert np.all(thr > 0)

    def test_pyeast_two_sided_rejected(self):
        with pytest.raises(DomainError):
            threshold_path("pyeast7", 200, 2.0, 0.05, TWO_SIDED)
