import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memristor_sp.graph import Edge, Graph, bfs_oracle, generate_grid
from memristor_sp.models import DeviceModel
from memristor_sp.protocols import (KinkDetector, KinkDetectorConfig, RampConfig, detect_kink,
                                    run_constant, run_ramp, sweep_optimal_voltage)
from memristor_sp.readout import compute_delta_g, verify_against_oracle
from memristor_sp.solver import Circuit, SolverConfig, run_until

LIN = DeviceModel.linear()
DET = KinkDetectorConfig()


def _graph(pairs, start, end):
    nodes = sorted({n for p in pairs for n in p})
    return Graph(nodes, [Edge(k, u, v) for k, (u, v) in enumerate(pairs)], start, end)


def _branches():
    return _graph([(0, 1), (0, 2), (2, 1)], 0, 1)


def _chain_with_decoy(n=5, decoy=8):
    """Start 0, end n: an n-device chain and a parallel decoy of ``decoy`` devices."""
    pairs = [(k, k + 1) for k in range(n)]
    prev = 0
    for k in range(decoy - 1):
        pairs.append((prev, 100 + k))
        prev = 100 + k
    pairs.append((prev, n))
    return _graph(pairs, 0, n)


def _logistic(t, t0, k=10.0):
    return 1.0 / (1.0 + np.exp(-k * (t - t0)))


class TestConstant:

    def test_optimal_voltage_turns_on_short_branch(self):
        # exactly at threshold the short device relaxes as 1 - exp(-0.01 t)
        cfg = SolverConfig(dt=1e-2, sample_dt=1e-1)
        res = run_constant(_branches(), LIN, 1e-4, cfg, t_max=500.0)
        assert res.state.x[0] >= 0.99
        assert res.state.x[1:].max() <= 0.01
        assert res.metrics().normalized > 0.95

    def test_low_voltage_turns_nothing_on(self):
        res = run_constant(_branches(), LIN, 2.5e-5, t_max=50.0)
        assert not res.timed_out
        assert res.state.x.max() < 0.01
        assert abs(res.metrics().normalized) < 0.01

    def test_high_voltage_turns_both_branches_on(self):
        res = run_constant(_branches(), LIN, 1e-3, t_max=50.0)
        assert res.state.x.min() > 0.9
        assert res.metrics().normalized < 0.1

    def test_zero_voltage_relaxes_and_spends_nothing(self):
        c = Circuit(_branches(), LIN)
        state = c.initial_state(0.0, x0=[0.5, 0.5, 0.5])
        out = run_until(state, c, 0.0, lambda s, t: False, SolverConfig(), t_max=0.5)
        # explicit Euler: x_n = x_0 (1 - dt/tau)^n, within 3 % of the exact decay
        np.testing.assert_allclose(out.state.x, 0.5 * (1 - 1e-2) ** 500, rtol=1e-9)
        np.testing.assert_allclose(out.state.x, 0.5 * np.exp(-5.0), rtol=0.03)
        assert out.state.energy == 0.0

    def test_stop_immediately(self):
        c = Circuit(_branches(), LIN)
        out = run_until(c.initial_state(1e-4), c, 1e-4, lambda s, t: True, SolverConfig(), 10.0)
        assert out.stopped and len(out.trace) == 1

    def test_timeout_flag(self):
        res = run_constant(_branches(), LIN, 1e-4, t_max=0.1)
        assert res.timed_out and res.state.t == pytest.approx(0.1)

    def test_gamma_voltage_scaling(self):
        # Only the product gamma*V enters the linear state dynamics.
        g = generate_grid(5, 5, 0.3, 2)
        a = run_constant(g, LIN, 3e-4, t_max=10.0)
        b = run_constant(g, DeviceModel.linear(gamma_lin=5e5), 6e-4, t_max=10.0)
        np.testing.assert_allclose(a.state.x, b.state.x, atol=1e-9)

    def test_energy_is_monotone(self):
        c = Circuit(_branches(), LIN)
        energies = []

        def watch(st, tr):
            energies.append(st.energy)
            return False

        run_until(c.initial_state(3e-4), c, 3e-4, watch, SolverConfig(), t_max=2.0)
        assert energies[0] == 0.0 and np.all(np.diff(energies) >= 0)


class TestRamp:

    def test_two_branch_readout(self):
        g = _branches()
        res = run_ramp(g, LIN)
        assert not res.timed_out
        # fires once the short device has switched, while the long branch
        # (threshold 2e-4 V) is still far from switching
        assert res.state.x[0] > 0.9 and res.state.x[1:].max() < 0.1
        m = res.metrics()
        assert m.success and m.read_path == [0, 1]

    def test_halted_state_is_the_result(self):
        g = generate_grid(6, 6, 0.3, 1)
        res = run_ramp(g, LIN)
        assert res.state.t == pytest.approx(res.detection_time)
        assert res.detection_time < RampConfig().t_max
        assert res.state.v_ctrl == pytest.approx(1e-4 + 5e-4 * res.detection_time)
        # detection index trails the halt by the detector lag
        lag = KinkDetector(DET, 1e-2).lag
        assert res.detection_index == len(res.trace) - 1 - lag

    def test_nothing_turns_on_times_out(self):
        # The OFF-state relaxation right after switch-on is itself concave;
        # with an almost flat ramp it lasts ~1 s, so arm the detector later.
        ramp = RampConfig(v0=1e-5, rate=1e-7, t_max=5.0, detector=KinkDetectorConfig(warmup=1.0))
        res = run_ramp(_branches(), LIN, ramp)
        assert res.timed_out and res.detection_time is None

    @pytest.mark.parametrize("seed", [0, 4, 9])
    def test_grid_instances_succeed(self, seed):
        g = generate_grid(7, 7, 0.3, seed)
        oracle = bfs_oracle(g)
        m = run_ramp(g, LIN).metrics(oracle)
        assert m.success and verify_against_oracle(m, oracle)

    def test_detection_coincides_with_delta_g_jump(self):
        g = generate_grid(8, 8, 0.3, 3)
        oracle = bfs_oracle(g)
        ramp = RampConfig()
        cfg = SolverConfig()
        c = Circuit(g, LIN)
        dg = []

        def record(st, tr):
            dg.append(compute_delta_g(g, st.x, LIN, oracle).normalized)
            return False

        run_until(c.initial_state(ramp.v0), c, lambda t: ramp.v0 + ramp.rate * t, record,
                  cfg, t_max=ramp.t_max)
        res = run_ramp(g, LIN, ramp, cfg)
        jump = int(np.argmax(np.diff(dg))) + 1
        assert abs(res.detection_index - jump) <= 5


class TestDetector:

    def test_linear_trace_never_fires(self):
        t = np.arange(400) * 0.01
        assert detect_kink(1.0 + 3.0 * t, DET, 0.01) is None

    @pytest.mark.parametrize("t0", [1.0, 1.505, 2.5])
    def test_logistic_fires_just_after_inflection(self, t0):
        t = np.arange(400) * 0.01
        idx = detect_kink(_logistic(t, t0), DET, 0.01)
        first_after = int(np.ceil(t0 / 0.01 - 1e-9))
        assert idx is not None and 0 <= idx - first_after <= 3

    def test_warmup_suppresses_early_kinks(self):
        t = np.arange(400) * 0.01
        det = KinkDetectorConfig(warmup=2.0)
        idx = detect_kink(_logistic(t, 1.0), det, 0.01)
        assert idx is None or idx >= 200

    @given(st.integers(0, 100), st.floats(1e-12, 1e6), st.floats(0.5, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_translation_and_scale_invariance(self, shift, scale, t0):
        t = np.arange(600) * 0.01
        base = _logistic(t, t0)
        det = KinkDetectorConfig(warmup=0.0)
        ref = detect_kink(base, det, 0.01)
        shifted = np.concatenate([np.full(shift, base[0]), base])
        assert detect_kink(scale * base, det, 0.01) == ref
        assert detect_kink(shifted, det, 0.01) == ref + shift

    def test_online_matches_offline(self):
        t = np.arange(300) * 0.01
        trace = _logistic(t, 1.3)
        d = KinkDetector(DET, 0.01)
        online = next(d.index for v in trace if d.push(v) is not None)
        assert online == detect_kink(trace, DET, 0.01)

    def test_bad_config(self):
        for kw in (dict(window=4), dict(window=1), dict(threshold=0.0), dict(warmup=-1.0)):
            with pytest.raises(ValueError):
                KinkDetectorConfig(**kw)

    def test_chang_defaults(self):
        r = RampConfig.for_model("chang")
        assert (r.v0, r.rate, r.t_max) == (0.0, 1e-3, 200.0)


class TestSweep:

    def test_single_entry(self):
        v, curve = sweep_optimal_voltage(_branches(), LIN, [3e-4], t_max=5.0)
        assert v == 3e-4 and len(curve) == 1

    def test_two_branch_optimum(self):
        grid = [0.5e-4, 0.75e-4, 1.0e-4, 1.25e-4, 1.5e-4, 2.5e-4]
        v, _ = sweep_optimal_voltage(_branches(), LIN, grid, t_max=30.0)
        assert abs(v - 1e-4) <= 0.25e-4 + 1e-12

    def test_chain_with_decoy(self):
        g = _chain_with_decoy()
        grid = np.arange(3e-4, 8.01e-4, 0.5e-4)
        v, curve = sweep_optimal_voltage(g, LIN, grid, t_max=30.0)
        assert abs(v - 5e-4) <= 0.5e-4 + 1e-12
        assert max(m.delta_g for _, m in curve) > 0

    def test_ties_go_to_lowest_voltage(self):
        # on a bare edge every voltage leaves Delta G at Delta G_max
        g = _graph([(0, 1)], 0, 1)
        v, _ = sweep_optimal_voltage(g, LIN, [3e-4, 1e-4, 2e-4], t_max=1.0)
        assert v == 1e-4

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            sweep_optimal_voltage(_branches(), LIN, [])
