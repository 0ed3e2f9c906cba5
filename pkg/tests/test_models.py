import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memristor_sp.models import (ChangParams, DeviceModel, LinearParams, chang_current,
                                 chang_didv, chang_dxdt, delta_g_max, linear_current,
                                 linear_dxdt, sample_varied_params, small_signal_conductance,
                                 stack_params)

LIN = LinearParams()
CH = ChangParams()


def test_published_parameter_defaults():
    assert (LIN.g_on, LIN.g_off, LIN.gamma_lin, LIN.tau) == (1e-1, 1e-4, 1e6, 0.1)
    assert (CH.alpha, CH.beta, CH.gamma_ch, CH.delta) == (5e-7, 0.5, 4e-6, 2.0)
    assert (CH.lam, CH.eta1, CH.eta2, CH.tau) == (4.5, 0.004, 4.0, 10.0)
    assert LIN.threshold_voltage == pytest.approx(1e-4)


class TestLinear:

    def test_off_current(self):
        assert linear_current(0.0, 1e-3, LIN) == pytest.approx(1e-7, rel=1e-12)

    def test_zero_bias(self):
        assert linear_current(1.0, 0.0, LIN) == 0.0

    def test_half_state(self):
        assert linear_current(0.5, 2e-3, LIN) == pytest.approx(1.0010e-4, rel=1e-12)

    @given(st.floats(0, 1), st.floats(-1, 1), st.floats(-10, 10))
    def test_homogeneous_in_voltage(self, x, v, a):
        assert linear_current(x, a * v, LIN) == pytest.approx(a * linear_current(x, v, LIN),
                                                              rel=1e-12, abs=1e-300)

    def test_dxdt_examples(self):
        assert linear_dxdt(0.0, 1e-7, LIN) == pytest.approx(0.1, rel=1e-12)
        assert linear_dxdt(1.0, 0.0, LIN) == pytest.approx(-10.0)
        # the turn-on threshold: an ON device at 1/(gamma tau G_ON) volts is stationary
        assert linear_dxdt(1.0, LIN.g_on * 1e-4, LIN) == pytest.approx(0.0, abs=1e-12)

    def test_dxdt_uses_magnitude(self):
        assert linear_dxdt(0.3, -2e-6, LIN) == linear_dxdt(0.3, 2e-6, LIN)


class TestChang:

    def test_zero_bias(self):
        for x in (0.0, 0.3, 1.0):
            assert chang_current(x, 0.0, CH) == 0.0

    def test_examples(self):
        assert chang_current(0.0, 1.0, CH) == pytest.approx(5e-7 * (1 - math.exp(-0.5)), rel=1e-12)
        assert chang_current(0.0, 1.0, CH) == pytest.approx(1.967e-7, rel=1e-3)
        assert chang_current(1.0, 0.1, CH) == pytest.approx(8.054e-7, rel=1e-3)
        assert chang_dxdt(0.0, 0.0, CH) == 0.0
        assert chang_dxdt(0.5, 0.0, CH) == pytest.approx(-0.05)
        assert chang_dxdt(0.0, 1.0, CH) == pytest.approx(4.436, rel=1e-3)

    def test_tiny_bias_is_accurate(self):
        v = 1e-9
        expected = CH.alpha * CH.beta * v * (1 - CH.beta * v / 2)
        assert chang_current(0.0, v, CH) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("x", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_derivative_matches_finite_differences(self, x):
        v = np.linspace(-1, 1, 201)
        h = 1e-5
        fd = (chang_current(x, v + h, CH) - chang_current(x, v - h, CH)) / (2 * h)
        np.testing.assert_allclose(chang_didv(x, v, CH), fd, rtol=1e-6)

    @given(st.floats(0, 1), st.floats(-2, 2), st.floats(1e-6, 1))
    def test_monotone_in_voltage(self, x, v, dv):
        assert chang_current(x, v + dv, CH) > chang_current(x, v, CH)

    def test_polarity_matters(self):
        assert chang_dxdt(0.0, 0.1, CH) > 0 > chang_dxdt(0.0, -0.1, CH)


class TestConductance:

    def test_linear_on(self):
        assert small_signal_conductance(1.0, LIN) == pytest.approx(0.1)

    def test_chang_limits(self):
        assert small_signal_conductance(0.0, CH) == pytest.approx(2.5e-7)
        assert small_signal_conductance(1.0, CH) == pytest.approx(8e-6)
        for x in (0.0, 0.4, 1.0):
            assert small_signal_conductance(x, CH) == pytest.approx(chang_didv(x, 0.0, CH))

    def test_delta_g_max(self):
        assert delta_g_max(LIN) == pytest.approx(0.0999)
        assert delta_g_max(CH) == pytest.approx(8e-6 - 2.5e-7)


class TestVariability:

    def test_zero_sigma_is_nominal(self):
        assert all(p == CH for p in sample_varied_params(CH, 0.0, 1, 5))

    def test_deterministic(self):
        assert sample_varied_params(CH, 0.1, 9, 20) == sample_varied_params(CH, 0.1, 9, 20)
        assert sample_varied_params(CH, 0.1, 9, 20) != sample_varied_params(CH, 0.1, 10, 20)

    def test_statistics(self):
        alphas = np.array([p.alpha for p in sample_varied_params(CH, 0.1, 3, 10_000)])
        assert abs(alphas.mean() - CH.alpha) < 0.01 * CH.alpha
        assert abs(alphas.std() - 0.1 * CH.alpha) < 0.1 * 0.1 * CH.alpha

    def test_truncation_keeps_parameters_positive(self):
        for p in sample_varied_params(LIN, 2.0, 4, 2000):
            for val in (p.g_off, p.gamma_lin, p.tau):
                assert val > 0
        tau = np.array([p.tau for p in sample_varied_params(CH, 2.0, 4, 2000)])
        assert tau.min() >= 0.01 * CH.tau and tau.max() <= 3 * CH.tau

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            sample_varied_params(CH, -0.1, 0, 3)

    def test_stacked_model_evaluates_per_device(self):
        per = sample_varied_params(CH, 0.1, 2, 4)
        model = DeviceModel(stack_params(per), CH)
        x = np.array([0.1, 0.2, 0.3, 0.4])
        v = np.array([0.01, -0.02, 0.03, 0.5])
        expected = [chang_current(x[k], v[k], per[k]) for k in range(4)]
        np.testing.assert_allclose(model.current(x, v), expected, rtol=1e-14)
        assert model.delta_g_max == pytest.approx(delta_g_max(CH))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        LinearParams(g_on=1e-5)
    with pytest.raises(ValueError):
        ChangParams(tau=0.0)
