import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from multihop.distributions import (
    DegenerateAllocationError, Exponential, Geometric, HopCountPmf, Normal, PowerLaw,
    RateAllocation, Rayleigh, alpha_for_region, classify_scalability, distance_stats,
    equal_selection_rates, fixed_support_rates, geometric_over_l_rates, law_cdf, law_density,
    mgf_L, parse_distribution, pmf_from_rates, rayleigh_mgf, region_sweep, residual_mgf_L,
    scaling_law_discretize, scaling_law_stats, uniform_rates,
)

from conftest import pmfs


class TestPmfFromRates:
    def test_normalizes(self):
        pmf = pmf_from_rates(RateAllocation([0.02, 0.01, 0.01]))
        np.testing.assert_allclose(pmf.probs, [0.5, 0.25, 0.25], atol=1e-15)

    def test_single_class(self):
        assert pmf_from_rates(RateAllocation([0.03])).probs.tolist() == [1.0]

    def test_point_mass(self):
        np.testing.assert_allclose(pmf_from_rates(RateAllocation([0, 0, 0.01])).probs, [0, 0, 1])

    def test_zero_total_rejected(self):
        with pytest.raises(DegenerateAllocationError):
            pmf_from_rates(RateAllocation([0.0, 0.0]))

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, rates, k):
        rates = np.asarray(rates)
        if rates.sum() < 1e-6:
            rates[0] = 1.0
        a = pmf_from_rates(RateAllocation(rates)).probs
        b = pmf_from_rates(RateAllocation(rates * k)).probs
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_allocation_aggregates(self):
        alloc = RateAllocation([0.01, 0.02, 0.005])
        assert alloc.lambda_total == pytest.approx(0.035, abs=1e-15)
        assert alloc.theta == pytest.approx(0.01 + 0.04 + 0.015, abs=1e-15)


class TestHopCountPmf:
    def test_rejects_bad_mass(self):
        with pytest.raises(ValueError):
            HopCountPmf(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            HopCountPmf(np.array([1.2, -0.2]))

    def test_geometric_truncation(self):
        pmf = HopCountPmf.geometric(0.2)
        assert pmf.mean == pytest.approx(5.0, abs=1e-9)
        assert (1 - 0.2) ** pmf.phi < 1e-12

    def test_string_round_trip(self):
        pmf = HopCountPmf.normalized([1, 2, 1])
        again = parse_distribution(pmf.to_spec())
        np.testing.assert_allclose(again.probs, pmf.probs, atol=1e-12)


class TestDistanceStats:
    def test_point_mass(self):
        for l in (1, 3, 10):
            s = distance_stats(HopCountPmf.point_mass(l))
            assert s.residual_mean == pytest.approx((l + 1) / 2)
            assert s.workload_bias == pytest.approx(0.5 + 1 / (2 * l))

    def test_geometric_bias_is_one(self):
        assert distance_stats(HopCountPmf.geometric(0.2)).workload_bias == pytest.approx(1, abs=1e-9)

    def test_small_example(self):
        s = distance_stats(HopCountPmf(np.array([0.5, 0.25, 0.25])))
        assert s.mean == pytest.approx(1.75)
        assert s.second_moment == pytest.approx(3.75)
        assert s.workload_bias == pytest.approx((3.75 + 1.75) / (2 * 1.75 ** 2))

    @given(pmfs())
    def test_bias_forms_agree(self, pmf):
        s = distance_stats(pmf)
        assert s.workload_bias > 0.5
        alt = 0.5 + s.variance / (2 * s.mean ** 2) + 1 / (2 * s.mean)
        assert s.workload_bias == pytest.approx(alt, abs=1e-12)


class TestGeneratingFunctions:
    def test_endpoints(self):
        pmf = HopCountPmf.normalized([1, 2, 3])
        assert mgf_L(pmf, 1.0) == pytest.approx(1.0, abs=1e-15)
        assert mgf_L(pmf, 0.0) == 0.0
        assert residual_mgf_L(pmf, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_two_point(self):
        assert mgf_L(HopCountPmf(np.array([0.5, 0.5])), 0.5) == pytest.approx(0.375)

    def test_domain(self):
        pmf = HopCountPmf.uniform(3)
        with pytest.raises(ValueError):
            mgf_L(pmf, 1.5)
        with pytest.raises(ValueError):
            residual_mgf_L(pmf, -0.1)

    @given(pmfs(), st.floats(0.0, 0.999))
    def test_residual_matches_ratio_form(self, pmf, z):
        ratio = z * (1 - mgf_L(pmf, z)) / ((1 - z) * pmf.mean)
        assert residual_mgf_L(pmf, z) == pytest.approx(ratio, rel=1e-9, abs=1e-12)

    @given(pmfs())
    def test_residual_derivative_at_one(self, pmf):
        h = 1e-6
        d = (residual_mgf_L(pmf, 1.0) - residual_mgf_L(pmf, 1 - h)) / h
        target = (pmf.second_moment + pmf.mean) / (2 * pmf.mean)
        assert d == pytest.approx(target, rel=1e-4, abs=1e-6)


class TestScalability:
    @pytest.mark.parametrize("tol", [1e-6, 1e-5, 1e-4, 1e-3])
    def test_three_examples(self, tol):
        assert not classify_scalability(uniform_rates(0.03), tol=tol).scalable
        v = classify_scalability(fixed_support_rates(0.03, [0.5, 0.3, 0.2]), tol=tol)
        assert v.scalable and v.witness_M >= 1 and v.evidence[-1][1] > tol
        assert classify_scalability(geometric_over_l_rates(0.03, 0.2), tol=tol).scalable

    def test_geometric_partial_sums(self):
        v = classify_scalability(geometric_over_l_rates(0.03, 0.2))
        M = np.arange(1, 51)
        np.testing.assert_allclose(v.table[-1], 0.03 * (1 - 0.8 ** M), atol=1e-6)

    def test_equal_selection_is_not_scalable(self):
        assert not classify_scalability(equal_selection_rates(0.03)).scalable

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            classify_scalability(uniform_rates(0.03), phi_schedule=(10, 100))
        with pytest.raises(ValueError):
            classify_scalability(uniform_rates(0.03), phi_schedule=(10, 5, 100))


class TestScalingLaws:
    def test_power_law_closed_forms(self):
        s = scaling_law_stats(PowerLaw(-4, 1.0))
        assert (s.c0, s.mean, s.second_moment) == pytest.approx((3, 1.5, 3))
        assert s.workload_bias == pytest.approx(2 / 3)

    def test_power_law_unit_bias(self):
        s = scaling_law_stats(PowerLaw(-2 - math.sqrt(2)))
        assert s.workload_bias == pytest.approx(1.0, abs=1e-9)

    def test_power_law_localized_cdf(self):
        assert law_cdf(PowerLaw(-10, 0.5), 1.0) == pytest.approx(0.998, abs=1e-3)

    def test_divergent_moments_flagged(self):
        s = scaling_law_stats(PowerLaw(-1.5))
        assert s.mean_divergent and s.second_moment_divergent
        s = scaling_law_stats(PowerLaw(-2.5))
        assert not s.mean_divergent and s.second_moment_divergent
        with pytest.raises(ValueError):
            PowerLaw(-0.5)

    @given(st.floats(-12.0, -3.05), st.floats(0.2, 3.0))
    def test_power_law_bias_against_quadrature(self, alpha, eps):
        law = PowerLaw(alpha, eps)
        f = law_density(law)
        m1 = integrate.quad(lambda x: x * f(x), eps, np.inf, epsabs=0, epsrel=1e-13)[0]
        m2 = integrate.quad(lambda x: x * x * f(x), eps, np.inf, epsabs=0, epsrel=1e-13)[0]
        assert scaling_law_stats(law).workload_bias == pytest.approx(m2 / (2 * m1 * m1), rel=1e-8)

    def test_continuous_moments_against_quadrature(self):
        for law in (Exponential(1.0, 0.5), Normal(2.0, 0.3), Rayleigh(2.0)):
            f = law_density(law)
            s = scaling_law_stats(law)
            assert integrate.quad(f, 0, np.inf)[0] == pytest.approx(1.0, rel=1e-8)
            assert integrate.quad(lambda x: x * f(x), 0, np.inf)[0] == pytest.approx(s.mean, rel=1e-8)

    def test_rayleigh(self):
        s = scaling_law_stats(Rayleigh(1.0))
        assert s.mean == pytest.approx(math.sqrt(math.pi / 2))
        f = law_density(Rayleigh(1.0))
        for t in (-2.0, -0.5, 0.3):
            num = integrate.quad(lambda x: math.exp(t * x) * f(x), 0, np.inf)[0]
            assert rayleigh_mgf(1.0, t) == pytest.approx(num, rel=1e-9)

    def test_alpha_for_region(self):
        assert alpha_for_region(5, 0.5, 0.99) == pytest.approx(-3)
        assert alpha_for_region(5, 0.5, 1e-12) == pytest.approx(-1, abs=1e-9)
        with pytest.raises(ValueError):
            alpha_for_region(0.5, 0.5)

    @given(st.floats(0.6, 50.0), st.floats(0.05, 0.999))
    def test_region_round_trip(self, r_t, coverage):
        a = alpha_for_region(r_t, 0.5, coverage)
        assert law_cdf(PowerLaw(a, 0.5), r_t) == pytest.approx(coverage, abs=1e-9)

    def test_region_sweep(self):
        rows = region_sweep([5.0], 0.5)
        assert rows[0][1] == pytest.approx(-3) and rows[0][2] == pytest.approx(0.5)


class TestDiscretize:
    def test_geometric_one(self):
        assert scaling_law_discretize(Geometric(1.0), 5).probs.tolist() == [1, 0, 0, 0, 0]

    def test_geometric_mean(self):
        assert scaling_law_discretize(Geometric(0.2), 200).mean == pytest.approx(5, abs=1e-6)

    def test_rayleigh_mean(self):
        # unit-width bins are coarse next to sigma = 1; the mean is tracked at larger sigma
        pmf = scaling_law_discretize(Rayleigh(10.0), 80)
        assert pmf.mean == pytest.approx(10 * math.sqrt(math.pi / 2), rel=0.01)

    def test_mass_preserved(self):
        for law in (PowerLaw(-3.5, 1.0), Exponential(0.0, 0.2), Rayleigh(3.0)):
            assert scaling_law_discretize(law, 40).probs.sum() == pytest.approx(1, abs=1e-12)


class TestParse:
    @pytest.mark.parametrize("text", ["geometric:0.2", "uniform:50", "power:-4:1.0", "rayleigh:1.0",
                                      "explicit:[0.5,0.25,0.25]", "point:3",
                                      "exponential:1:0.5", "normal:2:0.3"])
    def test_accepts(self, text):
        assert parse_distribution(text).probs.sum() == pytest.approx(1, abs=1e-12)

    @pytest.mark.parametrize("text", ["geo:0.2", "uniform", "power:x", "explicit:[1,"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_distribution(text)
