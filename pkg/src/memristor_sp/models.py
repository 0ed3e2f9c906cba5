"""Memristor device laws.

Two families are provided: a generic linear memristor whose conductance
interpolates between G_OFF and G_ON and whose state is driven by the
magnitude of the current, and the Pd/WO3/W model of Chang et al. whose
state is driven by the (signed) voltage.

All functions broadcast over numpy arrays, so a parameter set whose fields
are per-device arrays evaluates a whole circuit in one call.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class LinearParams:
    """Generic linear memristor parameters (SI units)."""

    g_on: ArrayLike = 1e-1
    g_off: ArrayLike = 1e-4
    gamma_lin: ArrayLike = 1e6
    tau: ArrayLike = 0.1

    def __post_init__(self):
        g_on, g_off = np.asarray(self.g_on), np.asarray(self.g_off)
        if np.any(g_off <= 0) or np.any(g_on <= g_off):
            raise ValueError("need g_on > g_off > 0")
        if np.any(np.asarray(self.gamma_lin) <= 0) or np.any(np.asarray(self.tau) <= 0):
            raise ValueError("gamma_lin and tau must be positive")

    @property
    def threshold_voltage(self) -> float:
        """Per-device voltage 1/(gamma*tau*G_ON) above which an ON device stays ON."""
        return 1.0 / (self.gamma_lin * self.tau * self.g_on)


@dataclass(frozen=True)
class ChangParams:
    """Chang et al. Pd/WO3/W memristor parameters (SI units)."""

    alpha: ArrayLike = 5e-7
    beta: ArrayLike = 0.5
    gamma_ch: ArrayLike = 4e-6
    delta: ArrayLike = 2.0
    lam: ArrayLike = 4.5
    eta1: ArrayLike = 0.004
    eta2: ArrayLike = 4.0
    tau: ArrayLike = 10.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if np.any(np.asarray(getattr(self, f.name)) <= 0):
                raise ValueError(f"{f.name} must be positive")


Params = Union[LinearParams, ChangParams]


def linear_current(x, v, p: LinearParams):
    return v * (p.g_on * x + p.g_off * (1.0 - x))


def linear_dxdt(x, i, p: LinearParams):
    return p.gamma_lin * np.abs(i) - x / p.tau


def chang_current(x, v, p: ChangParams):
    # expm1 keeps the OFF-branch current accurate at microvolt biases
    return (-(1.0 - x) * p.alpha * np.expm1(-p.beta * v)
            + x * p.gamma_ch * np.sinh(p.delta * v))


def chang_didv(x, v, p: ChangParams):
    """Analytic dI/dV of the Chang current law."""
    return ((1.0 - x) * p.alpha * p.beta * np.exp(-p.beta * v)
            + x * p.gamma_ch * p.delta * np.cosh(p.delta * v))


def chang_dxdt(x, v, p: ChangParams):
    return p.lam * (np.expm1(p.eta1 * v) - np.expm1(-p.eta2 * v)) - x / p.tau


def small_signal_conductance(x, params: Params):
    """Zero-bias conductance dI/dV at V=0.

    For the linear model this is just the Eq.-1 coefficient; for the Chang
    model it is (1-x)*alpha*beta + x*gamma*delta.
    """
    if isinstance(params, LinearParams):
        return params.g_on * x + params.g_off * (1.0 - x)
    return (1.0 - x) * params.alpha * params.beta + x * params.gamma_ch * params.delta


def delta_g_max(params: Params) -> float:
    """Largest possible ON/OFF conductance margin for a parameter set."""
    g_on = small_signal_conductance(1.0, params)
    g_off = small_signal_conductance(0.0, params)
    return float(np.mean(g_on - g_off))


def sample_varied_params(nominal: Params, sigma_rel: float, seed: int,
                         device_count: int) -> list:
    """Draw per-device parameter sets with Gaussian relative variability.

    Every scalar field of every device is drawn independently from
    Normal(nominal, sigma_rel * nominal), truncated to [0.01, 3] x nominal
    by redrawing out-of-range values.
    """
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be non-negative")
    names = [f.name for f in dataclasses.fields(nominal)]
    if sigma_rel == 0:
        return [nominal] * device_count
    rng = np.random.default_rng(seed)
    columns = {}
    for name in names:
        mu = float(getattr(nominal, name))
        columns[name] = _truncated_normal(rng, mu, sigma_rel * abs(mu), device_count,
                                          0.01 * mu, 3.0 * mu)
    cls = type(nominal)
    return [cls(**{n: float(columns[n][k]) for n in names}) for k in range(device_count)]


def _truncated_normal(rng, mu, sigma, size, lo, hi):
    out = rng.normal(mu, sigma, size)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.normal(mu, sigma, int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


def stack_params(per_device: list) -> Params:
    """Merge a list of scalar parameter sets into one array-valued set."""
    cls = type(per_device[0])
    names = [f.name for f in dataclasses.fields(cls)]
    return cls(**{n: np.array([float(getattr(p, n)) for p in per_device]) for n in names})


@dataclass(frozen=True)
class DeviceModel:
    """A device law bound to (possibly per-device) parameters.

    ``nominal`` keeps the unperturbed scalar parameters; the readout metric
    normalises against it.
    """

    params: Params
    nominal: Params

    @classmethod
    def linear(cls, **overrides) -> "DeviceModel":
        p = LinearParams(**overrides)
        return cls(p, p)

    @classmethod
    def chang(cls, **overrides) -> "DeviceModel":
        p = ChangParams(**overrides)
        return cls(p, p)

    @classmethod
    def varied(cls, nominal: Params, sigma_rel: float, seed: int,
               device_count: int) -> "DeviceModel":
        if sigma_rel == 0:
            return cls(nominal, nominal)
        per = sample_varied_params(nominal, sigma_rel, seed, device_count)
        return cls(stack_params(per), nominal)

    @property
    def kind(self) -> str:
        return "linear" if isinstance(self.params, LinearParams) else "chang"

    @property
    def is_linear(self) -> bool:
        return isinstance(self.params, LinearParams)

    def current(self, x, v):
        if self.is_linear:
            return linear_current(x, v, self.params)
        return chang_current(x, v, self.params)

    def didv(self, x, v):
        if self.is_linear:
            return small_signal_conductance(x, self.params) + 0.0 * v
        return chang_didv(x, v, self.params)

    def dxdt(self, x, v, i):
        if self.is_linear:
            return linear_dxdt(x, i, self.params)
        return chang_dxdt(x, v, self.params)

    def conductance(self, x):
        return small_signal_conductance(x, self.params)

    @property
    def delta_g_max(self) -> float:
        return delta_g_max(self.nominal)
