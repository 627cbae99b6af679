import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multihop.distributions import RateAllocation
from multihop.fairness import (
    feasible_bias_range, grid_search_qos, harmonic, log_sum, maxmin_allocation,
    maxmin_bias_closed_form, optimize_with_qos, proportional_allocation,
    proportional_bias_closed_form, workload_bias, workload_bias_from_rates,
)

THETA = 0.03


def resource(res):
    rates = res.allocation.rates
    return float(np.arange(1, rates.size + 1) @ rates)


def bias_by_definition(rates):
    # E[L_hat] / E[L] with E[L_hat] = (E[L^2] + E[L]) / (2 E[L])
    rates = np.asarray(rates, float)
    f = rates / rates.sum()
    l = np.arange(1, rates.size + 1)
    m1, m2 = l @ f, (l * l) @ f
    return (m2 + m1) / (2 * m1 * m1)


class TestProportional:
    def test_two_classes(self):
        res = proportional_allocation(THETA, 2)
        np.testing.assert_allclose(res.allocation.rates, [0.015, 0.0075], rtol=1e-15)
        assert resource(res) == pytest.approx(THETA, abs=1e-15)

    def test_harmonic_throughput(self):
        res = proportional_allocation(THETA, 50)
        assert res.network_throughput == pytest.approx(0.0026995, abs=5e-8)
        assert res.network_throughput == pytest.approx(THETA * harmonic(50) / 50, rel=1e-14)
        assert res.approx_throughput == pytest.approx(THETA * math.log(50) / 50)

    def test_exact_bias_next_to_log_approximation(self):
        res = proportional_allocation(THETA, 50)
        assert res.approx_workload_bias == pytest.approx(0.978, abs=1e-3)
        assert res.workload_bias == pytest.approx(1.19, abs=0.01)
        assert res.workload_bias == pytest.approx(proportional_bias_closed_form(50), rel=1e-12)

    @given(st.integers(1, 200))
    def test_equal_backlog_per_class(self, phi):
        rates = proportional_allocation(THETA, phi).allocation.rates
        backlog = rates * np.arange(1, phi + 1)
        np.testing.assert_allclose(backlog, THETA / phi, rtol=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            proportional_allocation(0.0, 3)
        with pytest.raises(ValueError):
            proportional_allocation(THETA, 0)


class TestMaxMin:
    def test_nine_classes(self):
        res = maxmin_allocation(THETA, 9)
        assert res.network_throughput == pytest.approx(0.006, rel=1e-13)
        assert np.ptp(res.allocation.rates) == 0

    def test_bias_values(self):
        assert maxmin_allocation(THETA, 3).workload_bias == pytest.approx(10 / 12, rel=1e-13)
        assert maxmin_bias_closed_form(10**9) == pytest.approx(2 / 3, rel=1e-8)

    def test_bias_identity_up_to_100(self):
        for phi in range(1, 101):
            res = maxmin_allocation(THETA, phi)
            assert abs(res.workload_bias - maxmin_bias_closed_form(phi)) <= 1e-12
            assert abs(bias_by_definition(res.allocation.rates)
                       - maxmin_bias_closed_form(phi)) <= 1e-12


class TestBothCriteria:
    @given(st.integers(1, 300), st.floats(1e-4, 0.5))
    def test_resource_constraint(self, phi, theta):
        for res in (proportional_allocation(theta, phi), maxmin_allocation(theta, phi)):
            assert resource(res) == pytest.approx(theta, rel=1e-12)

    @given(st.integers(1, 300))
    def test_proportional_throughput_dominates(self, phi):
        assert (proportional_allocation(THETA, phi).network_throughput
                >= maxmin_allocation(THETA, phi).network_throughput * (1 - 1e-12))

    @given(st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=30))
    def test_bias_forms_agree(self, w):
        rates = np.asarray(w)
        theta = float(np.arange(1, rates.size + 1) @ rates)
        u = workload_bias_from_rates(rates, theta)
        assert u == pytest.approx(bias_by_definition(rates), rel=1e-12)
        assert u == pytest.approx(workload_bias(RateAllocation(rates)), rel=1e-12)
        assert u > 0.5


class TestQos:
    def test_single_class(self):
        ok = optimize_with_qos(log_sum, THETA, 1.0, 1)
        assert ok.feasible and ok.allocation.rates.tolist() == [THETA]
        assert not optimize_with_qos(log_sum, THETA, 0.9, 1).feasible

    def test_matches_grid_search(self):
        res = optimize_with_qos(log_sum, THETA, 0.9, 2)
        best, _ = grid_search_qos(log_sum, THETA, 0.9, 2, step=1e-5)
        assert res.feasible
        assert res.objective == pytest.approx(best, abs=1e-4)
        assert res.objective >= best - 1e-4

    def test_three_classes_against_grid(self):
        res = optimize_with_qos(log_sum, THETA, 0.9, 3)
        best, _ = grid_search_qos(log_sum, THETA, 0.9, 3, step=5e-5, u_tol=2e-4)
        assert res.feasible
        assert res.objective >= best - 1e-3

    def test_infeasible_target(self):
        lo, _ = feasible_bias_range(2)
        assert lo == pytest.approx(0.75)
        assert grid_search_qos(log_sum, THETA, 0.7, 2)[1] is None
        res = optimize_with_qos(log_sum, THETA, 0.7, 2)
        assert not res.feasible
        assert max(abs(r) for r in res.residuals) > 1e-6

    @pytest.mark.parametrize("phi,u", [(2, 0.8), (4, 0.9), (6, 1.1), (10, 0.7)])
    def test_residuals_small(self, phi, u):
        res = optimize_with_qos(log_sum, THETA, u, phi)
        assert res.feasible
        assert max(abs(r) for r in res.residuals) <= 1e-6
        assert resource(res) == pytest.approx(THETA, rel=1e-6)
        assert res.workload_bias == pytest.approx(u, rel=1e-6)

    def test_throughput_objective(self):
        res = optimize_with_qos(lambda a: a.lambda_total, THETA, 0.9, 3)
        best, _ = grid_search_qos(lambda a: a.lambda_total, THETA, 0.9, 3, step=5e-5, u_tol=2e-4)
        assert res.feasible and res.objective >= best - 1e-5

    def test_deterministic(self):
        a = optimize_with_qos(log_sum, THETA, 0.95, 5, seed=7)
        b = optimize_with_qos(log_sum, THETA, 0.95, 5, seed=7)
        assert a.allocation.rates.tolist() == b.allocation.rates.tolist()

    def test_limits(self):
        with pytest.raises(ValueError):
            optimize_with_qos(log_sum, THETA, 0.9, 21)
        with pytest.raises(ValueError):
            optimize_with_qos(log_sum, THETA, 0.5, 3)
