"""Control protocols: constant voltage, voltage ramp with kink detection,
and the optimal-voltage sweep."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import Graph, PathOracle, bfs_oracle
from .models import DeviceModel
from .readout import PathMetrics, compute_delta_g
from .solver import Circuit, CircuitState, CurrentTrace, SolverConfig, run_until

STEADY_RATE = 1e-6  # s^-1


@dataclass(frozen=True)
class KinkDetectorConfig:
    """Trigger on the smoothed, current-normalised second derivative.

    ``threshold`` is in s^-2 (second derivative divided by the current).
    ``warmup`` is in seconds from the start of the trace.
    """

    window: int = 5
    threshold: float = -0.01
    warmup: float = 0.1

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.threshold >= 0:
            raise ValueError("threshold must be negative")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")


@dataclass(frozen=True)
class RampConfig:
    v0: float = 1e-4
    rate: float = 5e-4
    detector: KinkDetectorConfig = field(default_factory=KinkDetectorConfig)
    t_max: float = 50.0

    def __post_init__(self):
        if self.rate <= 0 or self.v0 < 0 or self.t_max <= 0:
            raise ValueError("need rate > 0, v0 >= 0, t_max > 0")

    @classmethod
    def for_model(cls, kind: str, **overrides) -> "RampConfig":
        # Warm-up spans ten sample periods of the matching SolverConfig. The
        # Chang threshold is the linear one rescaled by (tau_lin / tau_chang)^2.
        base = (dict(v0=1e-4, rate=5e-4, t_max=50.0,
                     detector=KinkDetectorConfig(threshold=-1e-2, warmup=0.1))
                if kind == "linear"
                else dict(v0=0.0, rate=1e-3, t_max=200.0,
                          detector=KinkDetectorConfig(threshold=-1e-6, warmup=1.0)))
        base.update(overrides)
        return cls(**base)


class KinkDetector:
    """Online second-derivative kink detector.

    Samples are pushed one at a time. A centred moving average of ``window``
    samples is second-differenced; the result is divided by the newest
    smoothed value. The first index whose normalised curvature falls below
    ``threshold`` (after warm-up) is the detection index. Because the
    smoothing is centred, that index lags the newest sample by
    ``window // 2 + 1``.
    """

    def __init__(self, cfg: KinkDetectorConfig, sample_dt: float):
        self.cfg = cfg
        self.sample_dt = sample_dt
        self.half = cfg.window // 2
        self.raw = deque(maxlen=cfg.window)
        self.smooth = deque(maxlen=3)
        self.count = 0
        self.index: Optional[int] = None
        self.last_value: Optional[float] = None
        self.warmup_samples = int(round(cfg.warmup / sample_dt))

    @property
    def lag(self) -> int:
        return self.half + 1

    def push(self, value: float) -> Optional[int]:
        self.raw.append(value)
        self.count += 1
        if len(self.raw) < self.cfg.window:
            return None
        self.smooth.append(sum(self.raw) / self.cfg.window)
        if len(self.smooth) < 3 or self.index is not None:
            return self.index
        s0, s1, s2 = self.smooth
        centre = self.count - 1 - self.lag
        if centre < self.warmup_samples or s2 <= 0:
            return None
        curvature = (s2 - 2.0 * s1 + s0) / (self.sample_dt ** 2) / s2
        self.last_value = curvature
        if curvature < self.cfg.threshold:
            self.index = centre
        return self.index


def detect_kink(trace, det: KinkDetectorConfig, sample_dt: Optional[float] = None) -> Optional[int]:
    """Index of the first armed kink in a current trace, or None.

    ``trace`` is a CurrentTrace or a plain sequence of currents (then
    ``sample_dt`` is required).
    """
    if isinstance(trace, CurrentTrace):
        currents = trace.i_total
        if sample_dt is None:
            sample_dt = trace.t[1] - trace.t[0]
    else:
        currents = trace
        if sample_dt is None:
            raise ValueError("sample_dt required for bare sequences")
    d = KinkDetector(det, sample_dt)
    for value in currents:
        if d.push(float(value)) is not None:
            return d.index
    return None


@dataclass
class ProtocolResult:
    state: CircuitState
    trace: CurrentTrace
    circuit: Circuit
    timed_out: bool
    detection_time: Optional[float] = None
    detection_index: Optional[int] = None

    def metrics(self, oracle: Optional[PathOracle] = None) -> PathMetrics:
        oracle = oracle or bfs_oracle(self.circuit.graph)
        return compute_delta_g(self.circuit.graph, self.state.x, self.circuit.model, oracle)


def run_constant(graph: Graph, model: DeviceModel, v_ctrl: float,
                 cfg: Optional[SolverConfig] = None, t_max: float = 50.0,
                 steady_rate: float = STEADY_RATE) -> ProtocolResult:
    """Hold ``v_ctrl`` until every device is steady or ``t_max`` passes."""
    cfg = cfg or SolverConfig.for_model(model.kind)
    circuit = Circuit(graph, model)
    state = circuit.initial_state(v_ctrl, cfg=cfg)

    def steady(st, tr):
        return st.t > 0 and float(np.max(np.abs(circuit.rates(st.x, st.op)))) < steady_rate

    out = run_until(state, circuit, v_ctrl, steady, cfg, t_max)
    return ProtocolResult(out.state, out.trace, circuit, out.timed_out)


def run_ramp(graph: Graph, model: DeviceModel, ramp: Optional[RampConfig] = None,
             cfg: Optional[SolverConfig] = None) -> ProtocolResult:
    """Ramp the control voltage and halt at the first detected current kink.

    The halted state is the result; nothing evolves after detection. On
    timeout ``detection_time`` is None and ``timed_out`` is set.
    """
    ramp = ramp or RampConfig.for_model(model.kind)
    cfg = cfg or SolverConfig.for_model(model.kind)
    circuit = Circuit(graph, model)
    v0, rate = ramp.v0, ramp.rate

    def v_fn(t):
        return v0 + rate * t

    state = circuit.initial_state(v_fn(0.0), cfg=cfg)
    detector = KinkDetector(ramp.detector, cfg.sample_dt)

    def fired(st, tr):
        return detector.push(st.i_total) is not None

    out = run_until(state, circuit, v_fn, fired, cfg, ramp.t_max)
    if out.stopped:
        return ProtocolResult(out.state, out.trace, circuit, False, out.state.t, detector.index)
    return ProtocolResult(out.state, out.trace, circuit, True)


def sweep_optimal_voltage(graph: Graph, model: DeviceModel, v_grid: Sequence[float],
                          cfg: Optional[SolverConfig] = None, t_max: float = 50.0,
                          oracle: Optional[PathOracle] = None,
                          observe: Optional[Callable[[float, ProtocolResult], None]] = None):
    """Run the constant protocol at each voltage and pick the best ΔG.

    Returns (v_opt, curve) where curve is a list of (v, PathMetrics). Ties
    go to the lowest voltage. ``observe(v, result)`` is called after each
    run, e.g. to collect solver diagnostics.
    """
    if len(v_grid) == 0:
        raise ValueError("v_grid must be non-empty")
    oracle = oracle or bfs_oracle(graph)
    curve = []
    for v in v_grid:
        res = run_constant(graph, model, float(v), cfg, t_max)
        if observe is not None:
            observe(float(v), res)
        curve.append((float(v), res.metrics(oracle)))
    best = max(range(len(curve)), key=lambda k: (curve[k][1].delta_g, -curve[k][0]))
    return curve[best][0], curve
