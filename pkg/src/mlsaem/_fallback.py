"""Pure numpy implementation of the hot loops (Euler paths, SMC filter steps).

This module is the reference the compiled extension mirrors.  Both
backends consume pre-drawn noise arrays and order every floating-point
operation identically, so a given seed produces the same trajectories
and the same resampling genealogies on either backend.

Parameter sets arrive as flat float64 vectors in ``model.PARAM_ORDER``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateTransitionError, NumericError, WeightCollapseError

# Indices into the flat parameter vector (see model.PARAM_ORDER).
G_CA, G_K, G_L, V_CA, V_K, V_L, CUR_I, CAP_C = 0, 1, 2, 3, 4, 5, 6, 7
PHI, GAMMA, SIGMA, V1, V2, V3, V4, RHO = 8, 9, 10, 11, 12, 13, 14, 15

PROPOSAL_IDS = {"transition": 0, "conditional": 1}
SCHEME_IDS = {"multinomial": 0, "residual": 1, "stratified": 2, "systematic": 3}

_LOG_2PI = math.log(2.0 * math.pi)


def euler_step_scalar(v, u, dt, pa, nv, nu):
    """One Euler-Maruyama step of the coupled (V, U) system.

    ``nv, nu`` are independent standard normals; with rho != 0 they are
    mixed through the noise matrix [[gamma, rho], [rho, sigma_u]].
    U is clamped to [0, 1] afterwards (the discretized step can exit the
    interval even though the continuous model cannot).
    """
    x = (v - pa[V3]) / pa[V4]
    ch = math.cosh(0.5 * x)
    th = math.tanh(x)
    a = 0.5 * pa[PHI] * ch * (1.0 + th)
    b = 0.5 * pa[PHI] * ch * (1.0 - th)
    minf = 0.5 * (1.0 + math.tanh((v - pa[V1]) / pa[V2]))
    fv = (
        -pa[G_CA] * minf * (v - pa[V_CA])
        - pa[G_K] * u * (v - pa[V_K])
        - pa[G_L] * (v - pa[V_L])
        + pa[CUR_I]
    ) / pa[CAP_C]
    bu = a - (a + b) * u
    su = pa[SIGMA] * math.sqrt(2.0 * a * b / (a + b) * u * (1.0 - u))
    sdt = math.sqrt(dt)
    v1 = v + dt * fv + sdt * (pa[GAMMA] * nv + pa[RHO] * nu)
    u1 = u + dt * bu + sdt * (pa[RHO] * nv + su * nu)
    if u1 < 0.0:
        u1 = 0.0
    elif u1 > 1.0:
        u1 = 1.0
    return v1, u1


def euler_path(v0, u0, dt, pa, noise_v, noise_u):
    """Iterate ``euler_step_scalar`` over pre-drawn noise arrays."""
    n = len(noise_v)
    v = np.empty(n + 1)
    u = np.empty(n + 1)
    v[0], u[0] = v0, u0
    vi, ui = float(v0), float(u0)
    for i in range(n):
        vi, ui = euler_step_scalar(vi, ui, dt, pa, noise_v[i], noise_u[i])
        v[i + 1] = vi
        u[i + 1] = ui
    return v, u


def resample_indices(weights, uniforms, scheme, n_out=None):
    """Ancestor indices for one resampling step.

    ``weights`` may be unnormalized (the cumulative total is used as the
    scale).  ``uniforms`` is a row of iid U(0,1) draws of which a
    scheme-dependent prefix is consumed; the row length bounds the number
    of output indices for the stochastic schemes.
    """
    cdf = np.cumsum(weights)
    total = cdf[-1]
    k_in = len(weights)
    k_out = len(uniforms) if n_out is None else n_out
    if scheme == 0:  # multinomial
        idx = np.searchsorted(cdf, uniforms[:k_out] * total)
    elif scheme == 2:  # stratified
        targets = (np.arange(k_out) + uniforms[:k_out]) / k_out * total
        idx = np.searchsorted(cdf, targets)
    elif scheme == 3:  # systematic
        targets = (np.arange(k_out) + uniforms[0]) / k_out * total
        idx = np.searchsorted(cdf, targets)
    elif scheme == 1:  # residual
        scaled = (k_out * weights) / total
        counts = np.floor(scaled).astype(np.int64)
        idx_det = np.repeat(np.arange(k_in), counts)
        r = k_out - int(counts.sum())
        if r > 0:
            rem = scaled - counts
            rcdf = np.cumsum(rem)
            rtotal = rcdf[-1]
            idx_rand = np.searchsorted(rcdf, uniforms[:r] * rtotal)
            idx = np.concatenate([idx_det, np.minimum(idx_rand, k_in - 1)])
        else:
            idx = idx_det
    else:
        raise ValueError(f"unknown resampling scheme id {scheme}")
    return np.minimum(idx, k_in - 1).astype(np.int64)


def filter_step(v_prev, v_next, dt, pa, particles_prev, weights_prev,
                uniforms, normals, proposal, scheme, eps, ess_frac, step):
    """One SMC step: resample, propose new gating values, reweight.

    Returns ``(ancestors, particles, weights, log_mean_w)`` with the
    weights normalized.  ``uniforms`` is always drawn (and partially
    consumed) even when an ESS trigger skips resampling, which keeps the
    random stream identical across configurations.
    """
    k = len(particles_prev)
    resampled = True
    if ess_frac > 0.0:
        # cumsum keeps the summation order identical to the compiled kernel
        ess = 1.0 / float(np.cumsum(weights_prev * weights_prev)[-1])
        if ess >= ess_frac * k:
            resampled = False
    if resampled:
        anc = resample_indices(weights_prev, uniforms, scheme, n_out=k)
    else:
        anc = np.arange(k, dtype=np.int64)

    gamma = pa[GAMMA]
    rho = pa[RHO]
    gamma2 = gamma * gamma
    rho2 = rho * rho
    x = (v_prev - pa[V3]) / pa[V4]
    ch = math.cosh(0.5 * x)
    th = math.tanh(x)
    a = 0.5 * pa[PHI] * ch * (1.0 + th)
    b = 0.5 * pa[PHI] * ch * (1.0 - th)
    ab = a + b
    sig2c = pa[SIGMA] * pa[SIGMA] * (2.0 * a * b / ab)
    minf = 0.5 * (1.0 + math.tanh((v_prev - pa[V1]) / pa[V2]))
    f_a = (
        -pa[G_CA] * minf * (v_prev - pa[V_CA])
        - pa[G_L] * (v_prev - pa[V_L])
        + pa[CUR_I]
    ) / pa[CAP_C]
    f_b = pa[G_K] * (v_prev - pa[V_K]) / pa[CAP_C]

    up = particles_prev[anc]
    fv = f_a - f_b * up
    bu = a - ab * up
    su2 = sig2c * (up * (1.0 - up))
    su = np.sqrt(su2)

    if proposal == 0:  # transition density of U
        mean_u = up + dt * bu
        var_u = dt * (su2 + rho2)
    else:  # conditional law of U given the next voltage
        coef_u = rho * (gamma + su) / (gamma2 + rho2)
        mean_u = up + dt * bu + coef_u * (v_next - v_prev - dt * fv)
        var_u = dt * (su2 + rho2) - dt * (rho2 * (gamma + su) ** 2 / (gamma2 + rho2))
    if np.any(var_u <= 0.0):
        raise DegenerateTransitionError(f"nonpositive proposal variance at step {step}")
    u_new = mean_u + np.sqrt(var_u) * normals
    u_new = np.clip(u_new, eps, 1.0 - eps)

    if proposal == 0:
        denom = su2 + rho2
        coef_v = rho * (gamma + su) / denom
        mean_v = v_prev + dt * fv + coef_v * (u_new - up - dt * bu)
        var_v = dt * (gamma2 + rho2) - dt * (rho2 * (gamma + su) ** 2 / denom)
    else:
        mean_v = v_prev + dt * fv
        var_v = np.full(k, dt * (gamma2 + rho2))
    if np.any(var_v <= 0.0):
        raise DegenerateTransitionError(f"nonpositive weight variance at step {step}")
    lw = -0.5 * (_LOG_2PI + np.log(var_v) + (v_next - mean_v) ** 2 / var_v)
    if not resampled:
        lw = lw + np.log(weights_prev)

    mx = float(np.max(lw))
    if math.isnan(mx):
        raise NumericError(f"NaN log-weight at filter step {step}")
    if mx == -math.inf:
        raise WeightCollapseError(step)
    w = np.exp(lw - mx)
    total = float(np.cumsum(w)[-1])
    weights = w / total
    log_mean_w = mx + math.log(total / k)
    return anc, u_new, weights, log_mean_w


def smc_filter(v_obs, dt, pa, particles0, weights0, normals, uniforms,
               proposal, scheme, eps, ess_frac):
    """Run the filter over a full observation record.

    ``normals`` and ``uniforms`` have shape (n, K); row i-1 drives step i.
    Returns (particles, weights, ancestors, log_mean_w) with leading
    dimension n+1; ancestors[0] is the identity.
    """
    n1 = len(v_obs)
    k = len(particles0)
    particles = np.empty((n1, k))
    weights = np.empty((n1, k))
    ancestors = np.empty((n1, k), dtype=np.int64)
    log_mean_w = np.zeros(n1)
    particles[0] = particles0
    weights[0] = weights0
    ancestors[0] = np.arange(k)
    for i in range(1, n1):
        anc, u_new, w, lmw = filter_step(
            float(v_obs[i - 1]), float(v_obs[i]), dt, pa,
            particles[i - 1], weights[i - 1],
            uniforms[i - 1], normals[i - 1],
            proposal, scheme, eps, ess_frac, i,
        )
        ancestors[i] = anc
        particles[i] = u_new
        weights[i] = w
        log_mean_w[i] = lmw
    return particles, weights, ancestors, log_mean_w
