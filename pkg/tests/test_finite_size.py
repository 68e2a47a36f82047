import json
import math

import pytest

from siqrng import (
    AfterpulseSpec,
    BudgetError,
    InfeasibleError,
    ParameterError,
    SecurityParams,
    composable_epsilon,
    final_rate,
    poisson_distribution,
    rate_entropy_inequality,
    rate_infinite_length,
    rate_random_sampling,
    run_sweep,
    theta_entropy_inequality,
    theta_random_sampling,
)
from siqrng.entropy_engine import (
    EntropyReport,
    binary_entropy,
    entropy_report_from_taus,
    measurement_taus,
)
from siqrng.finite_size import (
    hmin_with_tau_uncertainty,
    legacy_rate_detected,
    random_sampling_epsilon,
    scenario_from_params,
)

from conftest import make_detectors


def simple_report(hmin_z=0.9, q_single=0.4, q_double=0.1, eq=0.01, k=0.5):
    return EntropyReport(hmin_z=hmin_z, hmin_a=0.0, q_single=q_single,
                         q_double=q_double, eq=eq, k=k)


class TestThetaEntropyInequality:
    def test_reference_value(self):
        # direct evaluation, cross-checked with 40-digit arithmetic
        theta = theta_entropy_inequality(9.8e9, 2e8, 2.0 * 2.0**-50)
        assert theta == pytest.approx(4.2050358052107134e-4, rel=1e-12)

    def test_equal_split_specialization(self):
        n, eps = 1e8, 1e-9
        expected = math.sqrt(2.0 / n * (n + 1.0) / n * math.log(2.0 / eps))
        assert theta_entropy_inequality(n, n, eps) == pytest.approx(expected, rel=1e-12)

    def test_vanishes_for_large_counts(self):
        assert theta_entropy_inequality(1e16, 1e14, 1e-9) < 1e-6

    def test_strictly_decreasing_in_counts(self):
        a = theta_entropy_inequality(1e9, 1e7, 1e-9)
        b = theta_entropy_inequality(1e10, 1e8, 1e-9)
        assert b < a

    def test_increasing_as_budget_shrinks(self):
        assert (theta_entropy_inequality(1e9, 1e7, 1e-12)
                > theta_entropy_inequality(1e9, 1e7, 1e-6))


class TestThetaRandomSampling:
    @pytest.mark.parametrize("eq", [1e-4, 1e-3, 1e-2, 0.1])
    @pytest.mark.parametrize("n_total", [1e8, 1e10, 1e12])
    def test_round_trip(self, eq, n_total):
        q_x, eps_e = 0.02, 2.0**-50
        theta = theta_random_sampling(eq, q_x, n_total, eps_e)
        assert random_sampling_epsilon(eq, q_x, n_total, theta) <= eps_e
        assert random_sampling_epsilon(eq, q_x, n_total, theta) == pytest.approx(
            eps_e, rel=1e-6)

    def test_bracketing(self):
        eq, q_x, n_total, eps_e = 1e-3, 0.02, 1e10, 2.0**-50
        theta = theta_random_sampling(eq, q_x, n_total, eps_e)
        assert random_sampling_epsilon(eq, q_x, n_total, theta * (1 - 1e-6)) > eps_e

    def test_decreasing_in_pulse_count(self):
        thetas = [theta_random_sampling(1e-3, 0.02, n, 2.0**-50)
                  for n in (1e8, 1e9, 1e10, 1e11)]
        assert thetas == sorted(thetas, reverse=True)

    def test_increasing_as_budget_shrinks(self):
        assert (theta_random_sampling(1e-3, 0.02, 1e10, 2.0**-80)
                > theta_random_sampling(1e-3, 0.02, 1e10, 2.0**-20))

    def test_infeasible_raises(self):
        with pytest.raises(InfeasibleError):
            theta_random_sampling(0.4, 0.01, 1e4, 2.0**-50)

    def test_domain(self):
        with pytest.raises(ParameterError):
            theta_random_sampling(0.0, 0.02, 1e10, 1e-9)
        with pytest.raises(ParameterError):
            theta_random_sampling(0.6, 0.02, 1e10, 1e-9)


class TestRates:
    def test_saturated_error_rate_clamps_to_zero(self):
        report = simple_report(eq=0.4)
        assert rate_random_sampling(1e9, report, 0.2, 100) == 0.0

    def test_theta_zero_te_zero_recovers_hmin_a(self):
        report = simple_report()
        expected = 1e9 * ((report.hmin_z * report.q_single + report.q_double)
                          * (1.0 - binary_entropy(report.eq)) - report.q_double)
        assert rate_random_sampling(1e9, report, 0.0, 0.0) == pytest.approx(
            expected, rel=1e-12)
        assert rate_infinite_length(1e9, report) == pytest.approx(expected, rel=1e-12)

    def test_entropy_inequality_subtraction(self):
        report = simple_report()
        base = rate_entropy_inequality(1e9, report, 0.0, 1.0)
        tighter = rate_entropy_inequality(1e9, report, 0.0, 2.0 * 2.0**-50)
        assert base - tighter == pytest.approx(98.0, abs=1e-6)

    def test_legacy_detected_count_rate(self):
        assert legacy_rate_detected(1e6, 0.01, 0.0, 100) == pytest.approx(
            1e6 * (1.0 - binary_entropy(0.01)) - 100, rel=1e-12)

    def test_rates_non_increasing_in_theta(self):
        report = simple_report()
        for rate in (lambda th: rate_random_sampling(1e9, report, th, 100),
                     lambda th: rate_entropy_inequality(1e9, report, th,
                                                        2.0 * 2.0**-50)):
            values = [rate(th) for th in (0.0, 1e-5, 1e-3, 0.05, 0.3, 0.49)]
            assert values == sorted(values, reverse=True)


class TestComposableEpsilon:
    def test_zero_budget(self):
        assert composable_epsilon(0.0, 0.0, 10**6) == pytest.approx(0.0, abs=1e-90)

    def test_extraction_only_specialization(self):
        s = 2.0**-30
        assert composable_epsilon(0.0, 0.0, 30) == pytest.approx(
            math.sqrt(s * (2.0 - s)), rel=1e-12)

    def test_reference_budget(self):
        # eps_d = eps_e = 2^-50, t_e = 100: sqrt(s(2-s)) with s ~ 2^-49
        assert composable_epsilon(2.0**-50, 2.0**-50, 100) == pytest.approx(
            5.960464477539061e-8, rel=1e-9)

    def test_budget_error(self):
        with pytest.raises(BudgetError):
            composable_epsilon(0.7, 0.4, 1)


class TestSecurityParams:
    def test_reference_defaults(self):
        sec = SecurityParams()
        assert sec.total_pulses == 1e10
        assert sec.x_fraction == 0.02
        assert sec.eps_all == 2.0 * 2.0**-50
        assert sec.eps_d == 2.0**-50
        assert sec.t_e == 100
        assert sec.misalignment == 0.02
        assert sec.n_x == pytest.approx(2e8)
        assert sec.n_z == pytest.approx(9.8e9)

    def test_validation(self):
        with pytest.raises(ParameterError):
            SecurityParams(x_fraction=0.0)
        with pytest.raises(ParameterError):
            SecurityParams(eps_all=0.0)
        with pytest.raises(ParameterError):
            SecurityParams(t_e=0)

    def test_json_round_trip(self):
        sec = SecurityParams(total_pulses=1e9, x_fraction=0.05)
        again = SecurityParams.from_dict(json.loads(json.dumps(sec.to_dict())))
        assert again == sec


def _taus_at(nu=10.0, e_q=0.02):
    source = poisson_distribution(nu)
    return measurement_taus(source, eta_0=0.1, eta_1=0.1, eta_plus=0.1,
                            eta_minus=0.1, misalignment=e_q)


class TestFinalRate:
    def _args(self, spec=None):
        det0, det1, detp, detm = make_detectors(spec=spec)
        taus = _taus_at()
        return (det0, taus.tau_0, det1, taus.tau_1,
                detp, taus.tau_plus, detm, taus.tau_minus)

    def test_zero_delta_reduces_to_point_rate(self):
        sec = SecurityParams()
        args = self._args()
        report = entropy_report_from_taus(*args)
        theta = theta_random_sampling(report.eq, sec.x_fraction,
                                      sec.total_pulses, sec.eps_e)
        expected = rate_random_sampling(sec.n_z, report, theta, sec.t_e)
        out = final_rate(sec, *args, delta_d=0.0, grid_points=2)
        assert out.final_bits == pytest.approx(expected, rel=1e-9)
        assert out.random_bits == pytest.approx(expected, rel=1e-12)

    def test_non_increasing_in_delta(self):
        sec = SecurityParams()
        args = self._args()
        values = [final_rate(sec, *args, delta_d=d, grid_points=9).final_bits
                  for d in (0.0, 0.01, 0.05, 0.1)]
        assert values == sorted(values, reverse=True)

    def test_final_never_exceeds_point_rate(self):
        sec = SecurityParams()
        spec = AfterpulseSpec.exponential_from_rate(0.05, 0.001)
        args = self._args(spec=spec)
        out = final_rate(sec, *args, delta_d=0.02, grid_points=9)
        assert out.final_bits <= out.random_bits
        assert out.zeta == pytest.approx(
            composable_epsilon(sec.eps_d, sec.eps_e, sec.t_e), rel=1e-12)

    def test_report_serializes(self):
        sec = SecurityParams()
        out = final_rate(sec, *self._args(), delta_d=0.01, grid_points=5)
        data = out.to_dict()
        assert data["method"] == "random_sampling"
        assert data["per_pulse"] == pytest.approx(out.random_bits / 1e10)


class TestHminWithTauUncertainty:
    def test_zero_delta_is_point_value(self):
        det0, det1, detp, detm = make_detectors()
        taus = _taus_at()
        report = entropy_report_from_taus(det0, taus.tau_0, det1, taus.tau_1,
                                          detp, taus.tau_plus, detm, taus.tau_minus)
        h = hmin_with_tau_uncertainty(det0, taus.tau_0, det1, taus.tau_1,
                                      detp, taus.tau_plus, detm, taus.tau_minus,
                                      delta=0.0, grid_points=2)
        assert h == pytest.approx(report.hmin_a, rel=1e-12)

    def test_monotone_in_delta(self):
        det0, det1, detp, detm = make_detectors()
        taus = _taus_at()
        values = [hmin_with_tau_uncertainty(det0, taus.tau_0, det1, taus.tau_1,
                                            detp, taus.tau_plus, detm, taus.tau_minus,
                                            delta=d, grid_points=17)
                  for d in (0.0, 0.005, 0.02, 0.08)]
        assert values == sorted(values, reverse=True)


class TestRateScenario:
    def test_monitor_chain_transmittance(self):
        scenario = scenario_from_params({"eta_det": 0.8})
        # eta_bs * (1-eta_bs)/eta_bs * eta_det = 0.4 at zero attenuation
        assert scenario.transmittance(0.0) == pytest.approx(0.4, rel=1e-12)
        assert scenario.transmittance(10.0) == pytest.approx(0.04, rel=1e-12)

    def test_rates_ordering_at_low_loss(self):
        scenario = scenario_from_params({})
        rates = scenario.rates(1.5)
        assert rates["infinite_length"] >= rates["entropy_inequality"]
        assert rates["entropy_inequality"] >= rates["random_sampling"]
        assert rates["random_sampling"] > 0.0

    def test_afterpulse_lowers_rates(self):
        plain = scenario_from_params({})
        withap = scenario_from_params({"p_hat": 0.05})
        for method, value in plain.rates(1.5).items():
            assert withap.rates(1.5)[method] < value

    def test_rate_report_methods(self):
        scenario = scenario_from_params({})
        for method in ("random_sampling", "entropy_inequality", "infinite_length"):
            report = scenario.rate_report(1.5, method=method)
            assert report.method == method
            assert report.random_bits > 0.0
            assert report.final_bits == report.random_bits

    def test_monitor_sampling_penalizes(self):
        scenario = scenario_from_params({})
        point = scenario.rate_report(1.5)
        monitored = scenario.rate_report(1.5, monitor_samples=10**4)
        assert monitored.final_bits < point.final_bits
        assert monitored.final_bits <= monitored.random_bits

    def test_unknown_parameter_rejected(self):
        with pytest.raises(ParameterError):
            scenario_from_params({"bogus": 1.0})


class TestRatePeakLocation:
    def test_per_pulse_maximum_sits_between_one_and_two_db(self):
        # over a wide 0..10 dB scan the certified rate still peaks early
        scenario = scenario_from_params({})
        losses = [i * 0.1 for i in range(101)]
        values = [scenario.rates(loss)["random_sampling"] for loss in losses]
        peak = losses[values.index(max(values))]
        assert 1.0 <= peak <= 2.0


class TestRunSweep:
    def test_sweep_shape_and_determinism(self):
        spec = {"sweep_var": "voa_loss_db", "from": 0.0, "to": 2.0, "points": 5,
                "params": {"N": 1e9}, "method": "entropy_inequality"}
        reports = run_sweep(spec)
        assert len(reports) == 5
        assert all(r.method == "entropy_inequality" for r in reports)
        again = run_sweep(spec)
        assert [r.random_bits for r in reports] == [r.random_bits for r in again]

    def test_bad_sweep_var(self):
        with pytest.raises(ParameterError):
            run_sweep({"sweep_var": "nu"})

    def test_empty_range_rejected(self):
        with pytest.raises(ParameterError):
            run_sweep({"from": 2.0, "to": 1.0})
