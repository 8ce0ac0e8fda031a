"""Gaussian transition log-densities of the discretized model.

One Euler step from (v0, u0) over dt is jointly Gaussian:

    mean  (v0 + dt f,  u0 + dt b)
    cov   dt [[gamma^2 + rho^2,            rho (gamma + sigma_u)],
              [rho (gamma + sigma_u),      sigma_u^2 + rho^2   ]]

with sigma_u = diffusion_u(v0, u0) and rho the correlation of the two
driving noises.  Marginal and conditional factorizations coincide when
rho = 0.  Everything is computed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import model
from .errors import DegenerateTransitionError
from .model import ModelParams

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TransitionInput:
    """One observed transition: previous and next (v, u) states."""

    prev: tuple
    next: tuple
    params: ModelParams
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        model._check_u(self.prev[1])
        model._check_u(self.next[1])


def transition_moments(v0, u0, p, dt):
    """Mean/covariance pieces of one step: (mv, var_v, mu, var_u, cov)."""
    f = model.drift_v(v0, u0, p)
    b = model.drift_u(v0, u0, p)
    su = model.diffusion_u(v0, u0, p)
    mv = v0 + dt * f
    mu = u0 + dt * b
    var_v = dt * (p.gamma**2 + p.rho**2)
    var_u = dt * (su**2 + p.rho**2)
    cov = dt * p.rho * (p.gamma + su)
    return mv, var_v, mu, var_u, cov


def _norm_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


def log_joint(tr):
    """Log-density of (v1, u1) given (v0, u0) under the bivariate normal."""
    (v0, u0), (v1, u1) = tr.prev, tr.next
    mv, var_v, mu, var_u, cov = transition_moments(v0, u0, tr.params, tr.dt)
    det = var_v * var_u - cov * cov
    if not (var_v > 0 and var_u > 0 and det > 0):
        raise DegenerateTransitionError("singular transition covariance")
    dv = v1 - mv
    du = u1 - mu
    quad = (var_u * dv * dv - 2.0 * cov * dv * du + var_v * du * du) / det
    return -_LOG_2PI - 0.5 * math.log(det) - 0.5 * quad


def log_marginal_v(tr):
    """Log-density of v1 given (v0, u0)."""
    (v0, u0), (v1, _) = tr.prev, tr.next
    mv, var_v, _, _, _ = transition_moments(v0, u0, tr.params, tr.dt)
    if not var_v > 0:
        raise DegenerateTransitionError("zero variance for the V transition")
    return _norm_logpdf(v1, mv, var_v)


def log_marginal_u(tr):
    """Log-density of u1 given (v0, u0)."""
    (v0, u0), (_, u1) = tr.prev, tr.next
    _, _, mu, var_u, _ = transition_moments(v0, u0, tr.params, tr.dt)
    if not var_u > 0:
        raise DegenerateTransitionError(
            "zero variance for the U transition (u at a boundary with rho = 0)")
    return _norm_logpdf(u1, mu, var_u)


def log_cond_u_given_v(tr):
    """Log-density of u1 given (v1, v0, u0); equals the marginal when rho = 0."""
    (v0, u0), (v1, u1) = tr.prev, tr.next
    mv, var_v, mu, var_u, cov = transition_moments(v0, u0, tr.params, tr.dt)
    if not var_v > 0:
        raise DegenerateTransitionError("cannot condition on a degenerate V")
    mean = mu + cov / var_v * (v1 - mv)
    var = var_u - cov * cov / var_v
    if not var > 0:
        raise DegenerateTransitionError("nonpositive conditional variance for U")
    return _norm_logpdf(u1, mean, var)


def log_cond_v_given_u(tr):
    """Log-density of v1 given (u1, v0, u0); equals the marginal when rho = 0."""
    (v0, u0), (v1, u1) = tr.prev, tr.next
    mv, var_v, mu, var_u, cov = transition_moments(v0, u0, tr.params, tr.dt)
    if not var_u > 0:
        raise DegenerateTransitionError("cannot condition on a degenerate U")
    mean = mv + cov / var_u * (u1 - mu)
    var = var_v - cov * cov / var_u
    if not var > 0:
        raise DegenerateTransitionError("nonpositive conditional variance for V")
    return _norm_logpdf(v1, mean, var)
