# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mirrors of the hot loops in ``_fallback``.

Every floating-point operation is ordered exactly as in the numpy
reference so both backends produce the same paths and resampling
genealogies from the same pre-drawn noise (the extension is built with
-ffp-contract=off for that reason).
"""

import numpy as np

from libc.math cimport cosh, exp, fabs, isnan, log, sqrt, tanh, INFINITY

from .errors import DegenerateTransitionError, NumericError, WeightCollapseError

BACKEND_NAME = "compiled"

cdef double LOG_2PI = 1.8378770664093453

# Indices into the flat parameter vector (see model.PARAM_ORDER).
cdef enum:
    G_CA, G_K, G_L, V_CA, V_K, V_L, CUR_I, CAP_C
    PHI, GAMMA, SIGMA, P_V1, P_V2, P_V3, P_V4, RHO


def euler_step_scalar(double v, double u, double dt, double[::1] pa,
                      double nv, double nu):
    cdef double v1, u1
    _euler_step(v, u, dt, &pa[0], nv, nu, &v1, &u1)
    return v1, u1


cdef inline void _euler_step(double v, double u, double dt, double* pa,
                             double nv, double nu,
                             double* v_out, double* u_out) noexcept:
    cdef double x = (v - pa[P_V3]) / pa[P_V4]
    cdef double ch = cosh(0.5 * x)
    cdef double th = tanh(x)
    cdef double a = 0.5 * pa[PHI] * ch * (1.0 + th)
    cdef double b = 0.5 * pa[PHI] * ch * (1.0 - th)
    cdef double minf = 0.5 * (1.0 + tanh((v - pa[P_V1]) / pa[P_V2]))
    cdef double fv = (
        -pa[G_CA] * minf * (v - pa[V_CA])
        - pa[G_K] * u * (v - pa[V_K])
        - pa[G_L] * (v - pa[V_L])
        + pa[CUR_I]
    ) / pa[CAP_C]
    cdef double bu = a - (a + b) * u
    cdef double su = pa[SIGMA] * sqrt(2.0 * a * b / (a + b) * u * (1.0 - u))
    cdef double sdt = sqrt(dt)
    cdef double v1 = v + dt * fv + sdt * (pa[GAMMA] * nv + pa[RHO] * nu)
    cdef double u1 = u + dt * bu + sdt * (pa[RHO] * nv + su * nu)
    if u1 < 0.0:
        u1 = 0.0
    elif u1 > 1.0:
        u1 = 1.0
    v_out[0] = v1
    u_out[0] = u1


def euler_path(double v0, double u0, double dt, double[::1] pa,
               double[::1] noise_v, double[::1] noise_u):
    cdef Py_ssize_t n = noise_v.shape[0]
    v_arr = np.empty(n + 1)
    u_arr = np.empty(n + 1)
    cdef double[::1] v = v_arr
    cdef double[::1] u = u_arr
    cdef double vi = v0, ui = u0
    cdef Py_ssize_t i
    v[0] = v0
    u[0] = u0
    for i in range(n):
        _euler_step(vi, ui, dt, &pa[0], noise_v[i], noise_u[i], &vi, &ui)
        v[i + 1] = vi
        u[i + 1] = ui
    return v_arr, u_arr


cdef inline Py_ssize_t _bisect_left(double* a, Py_ssize_t n, double target) noexcept:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < target:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef int _resample(double* w, Py_ssize_t k_in, double* cdf, double* uniforms,
                   Py_ssize_t k_out, int scheme, long long* anc,
                   double* scratch, long long* counts) noexcept:
    """Fill ``anc`` with k_out ancestor indices; returns 0 on success."""
    cdef Py_ssize_t j, pos, idx, r
    cdef double total, acc, target, rtotal
    acc = 0.0
    for j in range(k_in):
        acc = acc + w[j]
        cdf[j] = acc
    total = cdf[k_in - 1]
    if scheme == 0:  # multinomial
        for j in range(k_out):
            idx = _bisect_left(cdf, k_in, uniforms[j] * total)
            if idx >= k_in:
                idx = k_in - 1
            anc[j] = idx
    elif scheme == 2:  # stratified
        for j in range(k_out):
            target = (j + uniforms[j]) / k_out * total
            idx = _bisect_left(cdf, k_in, target)
            if idx >= k_in:
                idx = k_in - 1
            anc[j] = idx
    elif scheme == 3:  # systematic
        for j in range(k_out):
            target = (j + uniforms[0]) / k_out * total
            idx = _bisect_left(cdf, k_in, target)
            if idx >= k_in:
                idx = k_in - 1
            anc[j] = idx
    elif scheme == 1:  # residual
        pos = 0
        for j in range(k_in):
            scratch[j] = (k_out * w[j]) / total
            counts[j] = <long long> scratch[j]
            scratch[j] = scratch[j] - counts[j]
        for j in range(k_in):
            for idx in range(counts[j]):
                anc[pos] = j
                pos += 1
        r = k_out - pos
        if r > 0:
            acc = 0.0
            for j in range(k_in):
                acc = acc + scratch[j]
                cdf[j] = acc
            rtotal = cdf[k_in - 1]
            for j in range(r):
                idx = _bisect_left(cdf, k_in, uniforms[j] * rtotal)
                if idx >= k_in:
                    idx = k_in - 1
                anc[pos] = idx
                pos += 1
    else:
        return -1
    return 0


def resample_indices(weights, uniforms, int scheme, n_out=None):
    """Compiled counterpart of ``_fallback.resample_indices``."""
    w = np.ascontiguousarray(weights, dtype=np.float64)
    u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t k_in = w.shape[0]
    cdef Py_ssize_t k_out = u.shape[0] if n_out is None else <Py_ssize_t> n_out
    anc_arr = np.empty(k_out, dtype=np.int64)
    cdf_arr = np.empty(k_in)
    scratch_arr = np.empty(k_in)
    counts_arr = np.empty(k_in, dtype=np.int64)
    cdef double[::1] wv = w
    cdef double[::1] uv = u
    cdef double[::1] cdf = cdf_arr
    cdef double[::1] scratch = scratch_arr
    cdef long long[::1] counts = counts_arr
    cdef long long[::1] anc = anc_arr
    if _resample(&wv[0], k_in, &cdf[0], &uv[0], k_out, scheme,
                 &anc[0], &scratch[0], &counts[0]) != 0:
        raise ValueError(f"unknown resampling scheme id {scheme}")
    return anc_arr


def smc_filter(double[::1] v_obs, double dt, double[::1] pa,
               double[::1] particles0, double[::1] weights0,
               double[:, ::1] normals, double[:, ::1] uniforms,
               int proposal, int scheme, double eps, double ess_frac):
    """Compiled counterpart of ``_fallback.smc_filter``."""
    cdef Py_ssize_t n1 = v_obs.shape[0]
    cdef Py_ssize_t k = particles0.shape[0]
    particles_arr = np.empty((n1, k))
    weights_arr = np.empty((n1, k))
    ancestors_arr = np.empty((n1, k), dtype=np.int64)
    log_mean_w_arr = np.zeros(n1)
    cdef double[:, ::1] particles = particles_arr
    cdef double[:, ::1] weights = weights_arr
    cdef long long[:, ::1] ancestors = ancestors_arr
    cdef double[::1] log_mean_w = log_mean_w_arr

    cdf_arr = np.empty(k)
    scratch_arr = np.empty(k)
    counts_arr = np.empty(k, dtype=np.int64)
    lw_arr = np.empty(k)
    su_arr = np.empty(k)
    up_arr = np.empty(k)
    cdef double[::1] cdf = cdf_arr
    cdef double[::1] scratch = scratch_arr
    cdef long long[::1] counts = counts_arr
    cdef double[::1] lw = lw_arr
    cdef double[::1] su_v = su_arr
    cdef double[::1] up_v = up_arr

    cdef double gamma = pa[GAMMA]
    cdef double rho = pa[RHO]
    cdef double gamma2 = gamma * gamma
    cdef double rho2 = rho * rho
    cdef double sigma = pa[SIGMA]

    cdef Py_ssize_t i, j
    cdef int resampled, bad_var
    cdef double v_prev, v_next, x, ch, th, a, b, ab, sig2c, minf, f_a, f_b
    cdef double ess, acc, up, fv, bu, su2, su, coef_u, mean_u, var_u, u_new
    cdef double denom, coef_v, mean_v, var_v, dvv, mx, total, wj

    particles[0, :] = particles0
    weights[0, :] = weights0
    for j in range(k):
        ancestors[0, j] = j

    for i in range(1, n1):
        v_prev = v_obs[i - 1]
        v_next = v_obs[i]

        resampled = 1
        if ess_frac > 0.0:
            acc = 0.0
            for j in range(k):
                acc = acc + weights[i - 1, j] * weights[i - 1, j]
            ess = 1.0 / acc
            if ess >= ess_frac * k:
                resampled = 0
        if resampled:
            _resample(&weights[i - 1, 0], k, &cdf[0], &uniforms[i - 1, 0],
                      k, scheme, &ancestors[i, 0], &scratch[0], &counts[0])
        else:
            for j in range(k):
                ancestors[i, j] = j

        x = (v_prev - pa[P_V3]) / pa[P_V4]
        ch = cosh(0.5 * x)
        th = tanh(x)
        a = 0.5 * pa[PHI] * ch * (1.0 + th)
        b = 0.5 * pa[PHI] * ch * (1.0 - th)
        ab = a + b
        sig2c = sigma * sigma * (2.0 * a * b / ab)
        minf = 0.5 * (1.0 + tanh((v_prev - pa[P_V1]) / pa[P_V2]))
        f_a = (
            -pa[G_CA] * minf * (v_prev - pa[V_CA])
            - pa[G_L] * (v_prev - pa[V_L])
            + pa[CUR_I]
        ) / pa[CAP_C]
        f_b = pa[G_K] * (v_prev - pa[V_K]) / pa[CAP_C]

        bad_var = 0
        for j in range(k):
            up = particles[i - 1, ancestors[i, j]]
            up_v[j] = up
            fv = f_a - f_b * up
            bu = a - ab * up
            su2 = sig2c * (up * (1.0 - up))
            su = sqrt(su2)
            su_v[j] = su
            if proposal == 0:
                mean_u = up + dt * bu
                var_u = dt * (su2 + rho2)
            else:
                coef_u = rho * (gamma + su) / (gamma2 + rho2)
                mean_u = up + dt * bu + coef_u * (v_next - v_prev - dt * fv)
                var_u = dt * (su2 + rho2) - dt * (rho2 * (gamma + su) * (gamma + su) / (gamma2 + rho2))
            if var_u <= 0.0:
                bad_var = 1
                break
            u_new = mean_u + sqrt(var_u) * normals[i - 1, j]
            if u_new < eps:
                u_new = eps
            elif u_new > 1.0 - eps:
                u_new = 1.0 - eps
            particles[i, j] = u_new

            if proposal == 0:
                denom = su2 + rho2
                coef_v = rho * (gamma + su) / denom
                mean_v = v_prev + dt * fv + coef_v * (u_new - up - dt * bu)
                var_v = dt * (gamma2 + rho2) - dt * (rho2 * (gamma + su) * (gamma + su) / denom)
            else:
                mean_v = v_prev + dt * fv
                var_v = dt * (gamma2 + rho2)
            if var_v <= 0.0:
                bad_var = 1
                break
            dvv = v_next - mean_v
            lw[j] = -0.5 * (LOG_2PI + log(var_v) + dvv * dvv / var_v)
        if bad_var:
            raise DegenerateTransitionError(f"nonpositive proposal variance at step {i}")
        if not resampled:
            for j in range(k):
                lw[j] = lw[j] + log(weights[i - 1, j])

        mx = -INFINITY
        for j in range(k):
            if isnan(lw[j]):
                raise NumericError(f"NaN log-weight at filter step {i}")
            if lw[j] > mx:
                mx = lw[j]
        if mx == -INFINITY:
            raise WeightCollapseError(i)
        total = 0.0
        for j in range(k):
            wj = exp(lw[j] - mx)
            scratch[j] = wj
            total = total + wj
        for j in range(k):
            weights[i, j] = scratch[j] / total
        log_mean_w[i] = mx + log(total / k)

    return particles_arr, weights_arr, ancestors_arr, log_mean_w_arr
