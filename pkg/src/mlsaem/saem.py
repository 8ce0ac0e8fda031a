"""SAEM-SMC estimation: sufficient statistics, SA updates, exact M-step, Fisher SEs.

The complete-data pseudo-likelihood is a curved exponential family once
the scaling constants V1..V4 are fixed.  The voltage drift is linear in

    nu = (g_L, g_Ca, g_K, g_K V_K, g_L V_L + I, g_Ca V_Ca) / C

against the design matrix with columns (-V, -m_inf(V) V, -U V, U, 1,
m_inf(V)), so the M-step is weighted least squares plus closed forms for
gamma and phi.  Sufficient statistics carry both the per-draw regression
solution and the cross-product sums that reconstruct the residual
quadratic form at any coefficient vector (needed for gamma and for the
complete-data criterion used by the Fisher recursion).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model, smc
from .errors import ConfigError, EstimationError, NumericError, RankDeficiencyError, WeightCollapseError
from .model import THETA_FIELDS, ModelParams
from .simulate import Trajectory, simulate_path, subsample
from .smc import EPS_INTERIOR, PriorConfig

log = logging.getLogger("mlsaem.saem")

_NU_TINY = 1e-12


@dataclass
class SufficientStats:
    """SA state: regression vector plus the scalar sums behind gamma and phi.

    ``s1`` is the per-draw least-squares solution of the drift regression;
    ``gram``/``x_dv``/``dv2_sum`` reconstruct the voltage residual sum of
    squares at any coefficient vector; ``a_sum``/``b_sum`` are the
    phi-free factors A = sum b~^2/c~ and B = sum (dU)^2/c~ of the gating
    likelihood; ``c_sum``/``log_c_sum`` complete its parameter-free part.
    """

    s1: np.ndarray
    gram: np.ndarray
    x_dv: np.ndarray
    dv2_sum: float
    a_sum: float
    b_sum: float
    c_sum: float
    log_c_sum: float
    n: int
    dt: float

    def validate(self):
        if not np.allclose(self.gram, self.gram.T, atol=1e-8):
            raise ValueError("gram matrix must be symmetric")
        if np.linalg.eigvalsh(self.gram)[0] < -1e-8 * max(1.0, float(np.abs(self.gram).max())):
            raise ValueError("gram matrix must be positive semidefinite")
        if self.a_sum < 0 or self.b_sum < 0:
            raise ValueError("phi sums must be nonnegative")


def _gating_factors(vm, um, params):
    """phi-free drift and squared-diffusion factors of the gating equation."""
    x = (vm - params.V3) / params.V4
    ch = np.cosh(0.5 * x)
    th = np.tanh(x)
    at = 0.5 * ch * (1.0 + th)
    bt = 0.5 * ch * (1.0 - th)
    btil = at - (at + bt) * um
    ctil = 2.0 * at * bt / (at + bt) * um * (1.0 - um)
    return btil, ctil


def design_matrix(vm, um, params):
    """Rows (-V, -m_inf(V) V, -U V, U, 1, m_inf(V)) for the drift regression."""
    minf = model.m_infty(vm, params)
    return np.column_stack([
        -vm, -minf * vm, -um * vm, um, np.ones(len(vm)), minf,
    ])


def compute_stats(v, u, params, dt):
    """Sufficient statistics of one complete (V, U) record sampled at step ``dt``.

    Gating values are clamped to [eps, 1-eps] (the same interior clamp the
    filter applies) so the phi sums are finite at simulated boundary hits.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if v.shape != u.shape or v.ndim != 1:
        raise ValueError("v and u must be equal-length vectors")
    if len(v) < 2:
        raise ValueError("need at least one transition")
    if not dt > 0:
        raise ValueError("dt must be positive")
    model._check_u(u)
    uc = np.clip(u, EPS_INTERIOR, 1.0 - EPS_INTERIOR)

    vm = v[:-1]
    um = uc[:-1]
    dv = np.diff(v)
    du = np.diff(uc)
    n = len(dv)

    x_mat = design_matrix(vm, um, params)
    gram = x_mat.T @ x_mat
    x_dv = x_mat.T @ dv
    if np.linalg.matrix_rank(gram) < 6:
        raise RankDeficiencyError("drift regression is rank deficient (constant U?)")
    s1 = np.linalg.solve(gram, x_dv)
    s1 = s1 + np.linalg.solve(gram, x_dv - gram @ s1)  # one refinement pass

    btil, ctil = _gating_factors(vm, um, params)
    return SufficientStats(
        s1=s1,
        gram=gram,
        x_dv=x_dv,
        dv2_sum=float(dv @ dv),
        a_sum=float(np.sum(btil * btil / ctil)),
        b_sum=float(np.sum(du * du / ctil)),
        c_sum=float(np.sum(btil * du / ctil)),
        log_c_sum=float(np.sum(np.log(ctil))),
        n=n,
        dt=float(dt),
    )


def sa_update(s_prev, s_new, a):
    """Stochastic-approximation step s + a (s_new - s), componentwise."""
    if not 0.0 < a <= 1.0:
        raise ValueError("step size must lie in (0, 1]")
    if s_prev.n != s_new.n or s_prev.dt != s_new.dt:
        raise ValueError("cannot mix statistics of different records")
    return SufficientStats(
        s1=s_prev.s1 + a * (s_new.s1 - s_prev.s1),
        gram=s_prev.gram + a * (s_new.gram - s_prev.gram),
        x_dv=s_prev.x_dv + a * (s_new.x_dv - s_prev.x_dv),
        dv2_sum=s_prev.dv2_sum + a * (s_new.dv2_sum - s_prev.dv2_sum),
        a_sum=s_prev.a_sum + a * (s_new.a_sum - s_prev.a_sum),
        b_sum=s_prev.b_sum + a * (s_new.b_sum - s_prev.b_sum),
        c_sum=s_prev.c_sum + a * (s_new.c_sum - s_prev.c_sum),
        log_c_sum=s_prev.log_c_sum + a * (s_new.log_c_sum - s_prev.log_c_sum),
        n=s_prev.n,
        dt=s_prev.dt,
    )


@dataclass(frozen=True)
class StepSchedule:
    """a_m = 1 during the warm start, then (m - warm_start)^-exponent.

    The exponent must lie in (1/2, 1] so that sum a_m diverges while
    sum a_m^2 converges (warm start exempt).
    """

    warm_start: int = 100
    exponent: float = 0.8

    def __post_init__(self):
        if self.warm_start < 0:
            raise ConfigError("warm_start must be nonnegative")
        if not 0.5 < self.exponent <= 1.0:
            raise ConfigError("step exponent must lie in (0.5, 1]")


def step_size(m, schedule=StepSchedule()):
    if m < 1:
        raise ValueError("iterations are numbered from 1")
    if m <= schedule.warm_start:
        return 1.0
    return float(m - schedule.warm_start) ** -schedule.exponent


def particle_schedule(m, k_max=100):
    """K(m) = min(m, k_max): grows with the iteration, then saturates."""
    if m < 1:
        raise ValueError("iterations are numbered from 1")
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    return min(m, k_max)


def residual_quadform(s, nu):
    """Reconstructed sum of squared voltage residuals at coefficients ``nu``."""
    dt = s.dt
    return float(s.dv2_sum - 2.0 * dt * (nu @ s.x_dv) + dt * dt * (nu @ s.gram @ nu))


def m_step(s, fixed, gamma_min=1e-3):
    """Exact maximizer of the complete-data criterion at statistics ``s``.

    Drift parameters come from the regression vector, gamma from the
    reconstructed residual variance, phi from the positive root of
    A phi^2 + n phi - B = 0.  ``fixed`` supplies the constants
    (C, V_L, sigma, rho, V1..V4) and is returned with the estimated
    fields replaced.
    """
    nu = s.s1 / s.dt
    if abs(nu[1]) < _NU_TINY or abs(nu[2]) < _NU_TINY:
        raise EstimationError("reversal-potential ratio undefined (g_Ca or g_K ~ 0)")
    c = fixed.C
    g_l = c * nu[0]
    g_ca = c * nu[1]
    g_k = c * nu[2]
    v_k = nu[3] / nu[2]
    v_ca = nu[5] / nu[1]
    i_in = c * nu[4] - g_l * fixed.V_L

    quad = residual_quadform(s, nu)
    gamma2 = quad / (s.n * s.dt)
    if gamma2 < gamma_min * gamma_min:
        log.warning("gamma^2 reconstruction %.3g below floor; clamping", gamma2)
        gamma2 = gamma_min * gamma_min

    sig2 = fixed.sigma * fixed.sigma
    a_coef = s.dt / sig2 * s.a_sum
    b_coef = s.b_sum / (s.dt * sig2)
    if b_coef <= 0:
        raise EstimationError("gating path carries no variation; phi undefined")
    if s.a_sum == 0:
        log.warning("stationary gating statistics; phi from the linear branch B/n")
    phi = 2.0 * b_coef / (s.n + math.sqrt(s.n * s.n + 4.0 * a_coef * b_coef))

    if g_ca < 0 or g_k < 0:
        log.warning("regression produced negative conductance (g_Ca=%.3g, g_K=%.3g); clipping at 0",
                    g_ca, g_k)
        g_ca = max(g_ca, 0.0)
        g_k = max(g_k, 0.0)
    return replace(fixed, g_Ca=g_ca, g_K=g_k, g_L=g_l, V_Ca=v_ca, V_K=v_k,
                   I=i_in, gamma=math.sqrt(gamma2), phi=phi)


def complete_data_mle(v, u=None, fixed=None, dt=None, gamma_min=1e-3):
    """Pseudo maximum likelihood with both coordinates observed.

    ``(v, u)`` may be a pair of arrays with ``dt`` given, or a Trajectory
    carrying both coordinates may be passed as ``v``.
    """
    if isinstance(v, Trajectory):
        if v.u is None:
            raise ConfigError("complete-data estimation needs the gating path")
        dt = v.dt
        v, u = v.v, v.u
    if fixed is None:
        raise ConfigError("fixed parameter constants are required")
    if dt is None:
        raise ConfigError("dt is required with plain arrays")
    stats = compute_stats(v, u, fixed, dt)
    return m_step(stats, fixed, gamma_min=gamma_min)


# ---------------------------------------------------------------------------
# Complete-data criterion L(s, theta) and its derivatives (Fisher recursion).

_I_G_CA, _I_G_K, _I_G_L = 0, 1, 2
_I_V_CA, _I_V_K, _I_I = 3, 4, 5
_I_GAMMA, _I_PHI = 6, 7


def _nu_of_params(p):
    return np.array([
        p.g_L, p.g_Ca, p.g_K, p.g_K * p.V_K, p.g_L * p.V_L + p.I, p.g_Ca * p.V_Ca,
    ]) / p.C


def _nu_jacobian(p):
    j = np.zeros((6, 8))
    c = p.C
    j[0, _I_G_L] = 1.0 / c
    j[1, _I_G_CA] = 1.0 / c
    j[2, _I_G_K] = 1.0 / c
    j[3, _I_G_K] = p.V_K / c
    j[3, _I_V_K] = p.g_K / c
    j[4, _I_G_L] = p.V_L / c
    j[4, _I_I] = 1.0 / c
    j[5, _I_G_CA] = p.V_Ca / c
    j[5, _I_V_CA] = p.g_Ca / c
    return j


def loglik(s, p):
    """Complete-data pseudo-log-likelihood evaluated through the statistics."""
    n, dt = s.n, s.dt
    nu = _nu_of_params(p)
    sig2 = p.sigma * p.sigma
    quad = residual_quadform(s, nu)
    l_v = -0.5 * n * math.log(2.0 * math.pi * dt) - n * math.log(p.gamma) \
        - quad / (2.0 * dt * p.gamma**2)
    l_u = -0.5 * n * math.log(2.0 * math.pi * dt * sig2) - 0.5 * s.log_c_sum \
        - 0.5 * n * math.log(p.phi) - s.b_sum / (2.0 * dt * sig2 * p.phi) \
        + s.c_sum / sig2 - dt * p.phi * s.a_sum / (2.0 * sig2)
    return l_v + l_u


def loglik_grad_hess(s, p):
    """Analytic gradient and Hessian of :func:`loglik` in theta order."""
    n, dt = s.n, s.dt
    gamma, phi = p.gamma, p.phi
    sig2 = p.sigma * p.sigma
    nu = _nu_of_params(p)
    jac = _nu_jacobian(p)

    resid = s.x_dv - dt * (s.gram @ nu)
    dl_dnu = resid / gamma**2
    quad = residual_quadform(s, nu)

    grad = jac.T @ dl_dnu
    grad[_I_GAMMA] = -n / gamma + quad / (dt * gamma**3)
    grad[_I_PHI] = -0.5 * n / phi + s.b_sum / (2.0 * dt * sig2 * phi**2) \
        - dt * s.a_sum / (2.0 * sig2)

    hess = jac.T @ (-(dt / gamma**2) * s.gram) @ jac
    hess[_I_G_K, _I_V_K] += dl_dnu[3] / p.C
    hess[_I_V_K, _I_G_K] += dl_dnu[3] / p.C
    hess[_I_G_CA, _I_V_CA] += dl_dnu[5] / p.C
    hess[_I_V_CA, _I_G_CA] += dl_dnu[5] / p.C
    cross = jac.T @ (-2.0 * resid / gamma**3)
    hess[_I_GAMMA, :] += cross
    hess[:, _I_GAMMA] += cross
    hess[_I_GAMMA, _I_GAMMA] = n / gamma**2 - 3.0 * quad / (dt * gamma**4)
    hess[_I_PHI, _I_PHI] = 0.5 * n / phi**2 - s.b_sum / (dt * sig2 * phi**3)
    return grad, hess


@dataclass
class FisherState:
    """SA state of the information recursion: score G, curvature H, F = H - G G'."""

    g: np.ndarray = field(default_factory=lambda: np.zeros(8))
    h: np.ndarray = field(default_factory=lambda: np.zeros((8, 8)))
    f: np.ndarray = field(default_factory=lambda: np.zeros((8, 8)))
    updates: int = 0


def fisher_update_from_stats(state, stats, p, a):
    grad, hess = loglik_grad_hess(stats, p)
    g = state.g + a * (grad - state.g)
    h = state.h + a * (hess + np.outer(grad, grad) - state.h)
    h = 0.5 * (h + h.T)
    f = h - np.outer(g, g)
    f = 0.5 * (f + f.T)
    return FisherState(g=g, h=h, f=f, updates=state.updates + 1)


def fisher_update(state, v, u_draw, p, a, dt=None):
    """One information-recursion step from a complete record ``(v, u_draw)``."""
    if isinstance(v, Trajectory):
        dt = v.dt
        v = v.v
    if dt is None:
        raise ConfigError("dt is required with plain arrays")
    stats = compute_stats(v, u_draw, p, dt)
    return fisher_update_from_stats(state, stats, p, a)


def standard_errors(f_matrix):
    """SEs from the diagonal of (-F)^-1 after symmetrization.

    Falls back to the pseudo-inverse with ``flagged=True`` when -F is not
    positive definite.
    """
    f_sym = 0.5 * (f_matrix + f_matrix.T)
    neg = -f_sym
    flagged = False
    try:
        np.linalg.cholesky(neg)
        cov = np.linalg.inv(neg)
    except np.linalg.LinAlgError:
        log.warning("-F not positive definite; using the pseudo-inverse")
        cov = np.linalg.pinv(neg)
        flagged = True
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return se, flagged


# ---------------------------------------------------------------------------
# The SAEM-SMC loop.

@dataclass(frozen=True)
class SaemConfig:
    """Tuning of the SAEM-SMC run (schedules, filter settings, guards)."""

    m_max: int = 200
    schedule: StepSchedule = field(default_factory=StepSchedule)
    k_max: int = 100
    proposal: str = "transition"
    scheme: str = "multinomial"
    prior: PriorConfig = field(default_factory=PriorConfig)
    eps: float = EPS_INTERIOR
    ess_threshold: float = 0.0
    gamma_min: float = 1e-3
    collapse_abort_frac: float = 0.2
    compute_se: bool = True
    backend: str | None = None

    def __post_init__(self):
        if self.m_max < 1:
            raise ConfigError("m_max must be >= 1")
        if not 0.0 <= self.collapse_abort_frac <= 1.0:
            raise ConfigError("collapse_abort_frac must lie in [0, 1]")
        particle_schedule(1, self.k_max)


@dataclass
class EstimateReport:
    """Per-iteration estimates, final parameters, standard errors, diagnostics."""

    theta_names: tuple
    iterations: np.ndarray
    a_values: np.ndarray
    k_values: np.ndarray
    final: ModelParams
    se: np.ndarray | None
    se_flagged: bool
    collapse_count: int
    final_stats: SufficientStats | None
    config: dict
    seed: object = None

    def final_theta(self):
        return dict(zip(self.theta_names, self.final.theta()))

    def se_dict(self):
        if self.se is None:
            return None
        return dict(zip(self.theta_names, (float(x) for x in self.se)))

    def to_json_dict(self):
        return {
            "theta": self.final_theta(),
            "standard_errors": self.se_dict(),
            "se_flagged": self.se_flagged,
            "collapse_count": self.collapse_count,
            "iterations": int(len(self.iterations)),
            "params": self.final.to_dict(),
            "config": self.config,
            "seed": None if self.seed is None else str(self.seed),
        }

    def write_iterations_csv(self, path, metadata=None):
        with open(path, "w") as fh:
            if metadata:
                pairs = " ".join(f"{k}={v}" for k, v in metadata.items())
                fh.write(f"# {pairs}\n")
            fh.write("m,a_m,K," + ",".join(self.theta_names) + "\n")
            for m in range(len(self.iterations)):
                row = ",".join(f"{x:.17g}" for x in self.iterations[m])
                fh.write(f"{m + 1},{self.a_values[m]:.17g},{int(self.k_values[m])},{row}\n")


def draw_theta0(p, rng, gamma_min=1e-3):
    """Random start not centered on ``p``: theta + 0.1 + (theta/3) N(0,1).

    Draws are clipped into the valid parameter space.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    theta = p.theta()
    draw = theta + 0.1 + theta / 3.0 * rng.standard_normal(len(theta))
    draw[_I_G_CA] = max(draw[_I_G_CA], 0.0)
    draw[_I_G_K] = max(draw[_I_G_K], 0.0)
    draw[_I_GAMMA] = max(draw[_I_GAMMA], gamma_min)
    draw[_I_PHI] = max(draw[_I_PHI], 1e-4)
    return p.with_theta(draw)


def saem_fit(obs, theta0, config=None, seed=None, min_obs=100):
    """Estimate theta from a voltage record by SAEM with an SMC S-step.

    Each iteration filters the hidden path at the current estimate, draws
    one smoothing path, folds its statistics into the SA state and runs
    the exact M-step; the Fisher recursion runs alongside with the same
    step sizes.  Iterations whose filter collapses keep the previous
    estimate; the run aborts if more than ``collapse_abort_frac`` of the
    iterations collapse.
    """
    config = config or SaemConfig()
    if not isinstance(obs, Trajectory):
        raise ConfigError("obs must be a Trajectory (u is ignored)")
    if len(obs) < min_obs:
        raise ConfigError(f"need at least {min_obs} observations (got {len(obs)})")

    v = obs.v
    dt = obs.dt
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    iter_seeds = ss.spawn(config.m_max)

    theta_hat = theta0
    s = None
    fisher_state = FisherState()
    iterations = np.empty((config.m_max, len(THETA_FIELDS)))
    a_values = np.empty(config.m_max)
    k_values = np.empty(config.m_max, dtype=np.int64)
    collapse_count = 0
    max_collapse = config.collapse_abort_frac * config.m_max

    for m in range(1, config.m_max + 1):
        a_m = step_size(m, config.schedule)
        k_m = particle_schedule(m, config.k_max)
        a_values[m - 1] = a_m
        k_values[m - 1] = k_m
        rng = np.random.default_rng(iter_seeds[m - 1])
        try:
            out = smc.filter(
                obs, theta_hat, k=k_m, proposal=config.proposal,
                scheme=config.scheme, seed=rng, prior=config.prior,
                eps=config.eps, ess_threshold=config.ess_threshold,
                backend=config.backend,
            )
            u_draw = smc.sample_smoothing_path(out, rng)
            stats_new = compute_stats(v, u_draw, theta_hat, dt)
        except WeightCollapseError as exc:
            collapse_count += 1
            log.warning("iteration %d: %s", m, exc)
            if collapse_count > max_collapse:
                raise EstimationError(
                    f"persistent weight collapse: {collapse_count} of {m} iterations"
                ) from exc
            iterations[m - 1] = theta_hat.theta()
            continue
        s = _scale_stats(stats_new, a_m) if s is None else sa_update(s, stats_new, a_m)
        theta_hat = m_step(s, theta_hat, gamma_min=config.gamma_min)
        fisher_state = fisher_update_from_stats(fisher_state, stats_new, theta_hat, a_m)
        iterations[m - 1] = theta_hat.theta()

    se = None
    se_flagged = False
    if config.compute_se and fisher_state.updates > 0:
        se, se_flagged = standard_errors(fisher_state.f)

    return EstimateReport(
        theta_names=THETA_FIELDS,
        iterations=iterations,
        a_values=a_values,
        k_values=k_values,
        final=theta_hat,
        se=se,
        se_flagged=se_flagged,
        collapse_count=collapse_count,
        final_stats=s,
        config=_config_dict(config),
        seed=seed,
    )


def _scale_stats(s, a):
    """a * s, the Eq.-style update from the zero initial state."""
    zero = SufficientStats(
        s1=np.zeros(6), gram=np.zeros((6, 6)), x_dv=np.zeros(6),
        dv2_sum=0.0, a_sum=0.0, b_sum=0.0, c_sum=0.0, log_c_sum=0.0,
        n=s.n, dt=s.dt,
    )
    return sa_update(zero, s, a)


def _config_dict(config):
    d = asdict(config)
    d["schedule"] = asdict(config.schedule)
    d["prior"] = asdict(config.prior)
    return d


# ---------------------------------------------------------------------------
# Replicate studies (simulate + fit, aggregated means and RMSE).

@dataclass(frozen=True)
class SimSettings:
    """Fine-step simulation setup feeding the estimation studies."""

    v0: float = -26.0
    u0: float = 0.2
    delta: float = 0.01
    steps: int = 20000
    stride: int = 10


def _replicate_worker(args):
    (index, ss, true_params, sim, config, theta0_mode, theta0) = args
    sim_seed, theta0_seed, fit_seed = ss.spawn(3)
    row = {"replicate": index}
    try:
        traj = simulate_path(true_params, sim.v0, sim.u0, sim.delta, sim.steps,
                             seed=np.random.default_rng(sim_seed),
                             backend=config.backend)
        obs = subsample(traj, sim.stride)
        complete = complete_data_mle(obs, fixed=true_params)
        if theta0_mode == "randomized":
            start = draw_theta0(true_params, np.random.default_rng(theta0_seed),
                                gamma_min=config.gamma_min)
        else:
            start = theta0
        report = saem_fit(obs, start, config, seed=fit_seed)
        row["complete"] = complete.theta().tolist()
        row["saem"] = report.final.theta().tolist()
        row["collapse_count"] = report.collapse_count
        row["ok"] = True
    except NumericError as exc:
        row["ok"] = False
        row["error"] = str(exc)
    return row


@dataclass
class ReplicateResult:
    theta_names: tuple
    true_theta: np.ndarray
    rows: list
    mean: dict
    rmse: dict
    failures: int


def replicate_study(replicates, true_params, sim=None, config=None, seed=None,
                    jobs=1, theta0_mode="randomized", theta0=None,
                    max_failure_frac=0.2):
    """Simulate + fit ``replicates`` datasets; aggregate means and RMSEs.

    Each replicate runs both the complete-data estimator and the SAEM
    estimator on the same subsampled record.  Individual numeric failures
    are recorded, not fatal, unless they exceed ``max_failure_frac``.
    """
    if replicates < 1:
        raise ConfigError("need at least one replicate")
    sim = sim or SimSettings()
    config = config or SaemConfig()
    ss = np.random.SeedSequence(seed)
    tasks = [
        (i, child, true_params, sim, config, theta0_mode, theta0)
        for i, child in enumerate(ss.spawn(replicates))
    ]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_replicate_worker, tasks))
    else:
        rows = [_replicate_worker(t) for t in tasks]

    failures = sum(1 for r in rows if not r["ok"])
    if failures > max_failure_frac * replicates:
        raise EstimationError(f"{failures} of {replicates} replicates failed")

    true_theta = true_params.theta()
    mean = {}
    rmse = {}
    for estimator in ("complete", "saem"):
        arr = np.array([r[estimator] for r in rows if r["ok"]])
        mean[estimator] = arr.mean(axis=0)
        rmse[estimator] = np.sqrt(np.mean((arr - true_theta) ** 2, axis=0))
    return ReplicateResult(
        theta_names=THETA_FIELDS,
        true_theta=true_theta,
        rows=rows,
        mean=mean,
        rmse=rmse,
        failures=failures,
    )
