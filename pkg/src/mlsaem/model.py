"""Stochastic Morris-Lecar dynamics: parameters, gating rates, drift and diffusion.

The model couples the membrane potential V (mV) to the normalized K+
conductance U (dimensionless, in [0, 1]):

    dV = f(V, U) dt + gamma dW_v
    dU = b(V, U) dt + sigma_u(V, U) dW_u

All functions here are pure and accept scalars or numpy arrays.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError

# Parameters estimated from voltage observations, in reporting order.
THETA_FIELDS = ("g_Ca", "g_K", "g_L", "V_Ca", "V_K", "I", "gamma", "phi")

# Flat layout used to hand parameter sets to the numeric backends.
PARAM_ORDER = (
    "g_Ca", "g_K", "g_L", "V_Ca", "V_K", "V_L", "I", "C",
    "phi", "gamma", "sigma", "V1", "V2", "V3", "V4", "rho",
)

# Tolerance for gating values barely outside [0, 1] from float round-off.
U_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: estimated parameters plus fixed constants.

    Units: conductances uS/cm2, potentials mV, currents uA/cm2,
    C uF/cm2, phi 1/ms, gamma mV ms^-1/2, sigma ms^-1/2.

    ``g_Ca, g_K, g_L, V_Ca, V_K, I, gamma, phi`` form the estimated
    vector theta; ``V_L, C, sigma, rho, V1..V4`` are fixed configuration
    (C and V_L are unidentifiable from voltage data, sigma practically so,
    and V1..V4 must be known for the exponential-family M-step).
    """

    g_Ca: float
    g_K: float
    g_L: float
    V_Ca: float
    V_K: float
    V_L: float
    I: float
    C: float = 1.0
    phi: float = 0.04
    gamma: float = 1.0
    sigma: float = 0.03
    V1: float = -1.2
    V2: float = 18.0
    V3: float = 2.0
    V4: float = 30.0
    rho: float = 0.0

    def __post_init__(self):
        if self.g_Ca < 0 or self.g_K < 0:
            raise ConfigError("g_Ca and g_K must be nonnegative")
        if not self.gamma > 0:
            raise ConfigError("gamma must be strictly positive")
        if not 0 < self.sigma <= 1:
            raise ConfigError("sigma must lie in (0, 1]")
        if not self.C > 0:
            raise ConfigError("C must be positive")
        if self.V2 == 0 or self.V4 == 0:
            raise ConfigError("V2 and V4 must be nonzero")
        if not self.phi > 0:
            raise ConfigError("phi must be strictly positive")

    def as_array(self):
        """Flat float64 vector in ``PARAM_ORDER`` (consumed by backends)."""
        return np.array([getattr(self, k) for k in PARAM_ORDER], dtype=np.float64)

    def theta(self):
        """Estimated parameter vector in ``THETA_FIELDS`` order."""
        return np.array([getattr(self, k) for k in THETA_FIELDS], dtype=np.float64)

    def with_theta(self, theta):
        """Copy with the estimated parameters replaced by ``theta``."""
        values = {k: float(v) for k, v in zip(THETA_FIELDS, theta)}
        return replace(self, **values)

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data, base=None):
        """Build from a flat key-value mapping.

        Unknown keys are rejected. Missing keys fall back to ``base``
        (another ModelParams) when given, otherwise to the field defaults.
        """
        names = set(PARAM_ORDER)
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
        merged = base.to_dict() if base is not None else {}
        merged.update({k: float(v) for k, v in data.items()})
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(f"incomplete parameter set: {exc}") from exc

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path, base=None):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base=base)


def default_params():
    """Class-II parameter set used throughout the simulation study."""
    return ModelParams(
        g_Ca=0.22, g_K=0.4, g_L=0.1,
        V_Ca=120.0, V_K=-84.0, V_L=-60.0,
        I=4.5, C=1.0, phi=0.04, gamma=1.0, sigma=0.03,
        V1=-1.2, V2=18.0, V3=2.0, V4=30.0, rho=0.0,
    )


def _check_u(u):
    if np.any(np.less(u, -U_TOL)) or np.any(np.greater(u, 1.0 + U_TOL)):
        raise ValueError("gating value u outside [0, 1]")


def m_infty(v, p):
    """Equilibrium value of the normalized Ca2+ conductance at voltage v."""
    return 0.5 * (1.0 + np.tanh((v - p.V1) / p.V2))


def alpha(v, p):
    """Opening rate of the K+ channels (1/ms), strictly positive."""
    x = (v - p.V3) / p.V4
    return 0.5 * p.phi * np.cosh(0.5 * x) * (1.0 + np.tanh(x))


def beta(v, p):
    """Closing rate of the K+ channels (1/ms), strictly positive."""
    x = (v - p.V3) / p.V4
    return 0.5 * p.phi * np.cosh(0.5 * x) * (1.0 - np.tanh(x))


def drift_v(v, u, p):
    """Voltage drift: Ca2+, K+ and leak currents plus the input current."""
    _check_u(u)
    return (
        -p.g_Ca * m_infty(v, p) * (v - p.V_Ca)
        - p.g_K * u * (v - p.V_K)
        - p.g_L * (v - p.V_L)
        + p.I
    ) / p.C


def drift_u(v, u, p):
    """Gating drift alpha(v)(1-u) - beta(v)u."""
    _check_u(u)
    return alpha(v, p) * (1.0 - u) - beta(v, p) * u


def diffusion_u(v, u, p):
    """Channel-noise intensity; vanishes exactly at u in {0, 1}.

    sigma_u(v, u) = sigma * sqrt(2 alpha beta / (alpha + beta) u (1 - u)),
    which keeps U inside the unit interval for sigma <= 1.
    """
    _check_u(u)
    a = alpha(v, p)
    b = beta(v, p)
    uc = np.clip(u, 0.0, 1.0)
    return p.sigma * np.sqrt(2.0 * a * b / (a + b) * uc * (1.0 - uc))
