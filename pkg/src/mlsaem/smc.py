"""Sequential Monte Carlo filter for the hidden gating path.

The hidden coordinate is non-Markovian (it is coupled to the observed
voltage), so weights are transition densities of the voltage given the
particle's own history rather than an observation kernel.  Two proposals
are supported and coincide when the driving noises are independent:

- ``transition``: propose from the one-step law of U given the previous
  state; weight = density of the next voltage given (previous state, new u).
- ``conditional``: propose from the law of U given the next voltage too;
  weight = density of the next voltage given the previous state only.

Resampling happens at every step by default (optional ESS trigger).
Particles live in [eps, 1-eps] so the channel-noise variance stays
positive and every weight is finite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _fallback
from ._backend import get_backend
from ._fallback import PROPOSAL_IDS, SCHEME_IDS
from .errors import ConfigError
from .simulate import Trajectory

# Interior clamp keeping diffusion_u > 0 at every particle.
EPS_INTERIOR = 1e-6

RESAMPLING_SCHEMES = tuple(SCHEME_IDS)
PROPOSALS = tuple(PROPOSAL_IDS)


@dataclass(frozen=True)
class PriorConfig:
    """Initial law of U given the first voltage.

    The model leaves p(U_0 | V_0) unspecified; uniform is the default,
    with Beta(a, b) and a point mass as alternatives.  Initial weights
    are uniform.
    """

    kind: str = "uniform"
    a: float = 1.0
    b: float = 1.0
    value: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform", "beta", "point"):
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.kind == "beta" and (self.a <= 0 or self.b <= 0):
            raise ConfigError("beta prior needs positive shape parameters")
        if self.kind == "point" and not 0.0 <= self.value <= 1.0:
            raise ConfigError("point prior value must lie in [0, 1]")

    def sample(self, rng, k, eps=EPS_INTERIOR):
        if self.kind == "uniform":
            draws = rng.random(k)
        elif self.kind == "beta":
            draws = rng.beta(self.a, self.b, size=k)
        else:
            draws = np.full(k, self.value)
        return np.clip(draws, eps, 1.0 - eps)


@dataclass
class ParticleCloud:
    """Weighted particles at one step plus their ancestor slots at the previous one."""

    step: int
    particles: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray

    def __post_init__(self):
        k = len(self.particles)
        if not (len(self.weights) == len(self.ancestors) == k):
            raise ValueError("particles, weights and ancestors must have equal length")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(self.ancestors < 0):
            raise ValueError("ancestor indices must be nonnegative")


@dataclass
class FilterOutput:
    """Full filter history with per-step summaries.

    ``particles``/``weights`` have shape (n+1, K); ``ancestors[i]`` maps
    step-i slots to step-(i-1) slots (identity at step 0).
    """

    dt: float
    particles: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray
    mean_u: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    log_norm_const: float | None
    k: int
    proposal: str
    scheme: str
    seed: object = None

    @property
    def n_steps(self):
        return len(self.particles) - 1

    @property
    def t(self):
        return np.arange(len(self.particles)) * self.dt

    def cloud(self, i):
        return ParticleCloud(
            step=i,
            particles=self.particles[i],
            weights=self.weights[i],
            ancestors=self.ancestors[i],
        )

    @property
    def clouds(self):
        return [self.cloud(i) for i in range(len(self.particles))]

    def to_csv(self, path, metadata=None):
        """Write ``t,mean_u,lo95,hi95`` rows with 17 significant digits."""
        with open(path, "w") as fh:
            if metadata:
                pairs = " ".join(f"{k}={v}" for k, v in metadata.items())
                fh.write(f"# {pairs}\n")
            fh.write("t,mean_u,lo95,hi95\n")
            for i in range(len(self.particles)):
                fh.write(
                    f"{i * self.dt:.17g},{self.mean_u[i]:.17g},"
                    f"{self.lo95[i]:.17g},{self.hi95[i]:.17g}\n"
                )


_CLOUD_MAGIC = b"MLPF"
_CLOUD_VERSION = 1


def dump_clouds(out, path):
    """Binary dump of the particle history (versioned, little-endian doubles)."""
    n1, k = out.particles.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _CLOUD_MAGIC, _CLOUD_VERSION, n1, k))
        fh.write(struct.pack("<d", out.dt))
        fh.write(out.particles.astype("<f8").tobytes())
        fh.write(out.weights.astype("<f8").tobytes())
        fh.write(out.ancestors.astype("<i8").tobytes())


def load_clouds(path):
    """Read a :func:`dump_clouds` file back as (dt, particles, weights, ancestors)."""
    with open(path, "rb") as fh:
        magic, version, n1, k = struct.unpack("<4sIII", fh.read(16))
        if magic != _CLOUD_MAGIC:
            raise ConfigError(f"{path}: not a particle-cloud dump")
        if version != _CLOUD_VERSION:
            raise ConfigError(f"{path}: unsupported cloud dump version {version}")
        (dt,) = struct.unpack("<d", fh.read(8))
        count = n1 * k
        particles = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n1, k)
        weights = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n1, k)
        ancestors = np.frombuffer(fh.read(8 * count), dtype="<i8").reshape(n1, k)
    return dt, particles.copy(), weights.copy(), ancestors.copy()


def init_particles(v0, k, prior=None, rng=None, eps=EPS_INTERIOR):
    """Draw the initial cloud from the configured prior with uniform weights."""
    if k < 1:
        raise ConfigError("need at least one particle")
    prior = prior or PriorConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    particles = prior.sample(rng, k, eps)
    return ParticleCloud(
        step=0,
        particles=particles,
        weights=np.full(k, 1.0 / k),
        ancestors=np.arange(k, dtype=np.int64),
    )


def resample(weights, k, scheme="multinomial", rng=None):
    """Draw ``k`` ancestor indices; marginal selection probability = weight.

    All four schemes share the unbiasedness property
    E[#offspring of j] = k * weights[j].  A full row of ``k`` uniforms is
    always drawn so the random stream does not depend on the scheme.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(np.isnan(weights)) or np.any(weights < 0):
        raise ValueError("weights must be nonnegative and free of NaNs")
    if abs(float(np.sum(weights)) - 1.0) > 1e-9:
        raise ValueError("weights must be normalized")
    if scheme not in SCHEME_IDS:
        raise ConfigError(f"unknown resampling scheme {scheme!r}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    uniforms = rng.random(k)
    return _fallback.resample_indices(weights, uniforms, SCHEME_IDS[scheme], n_out=k)


def propagate_and_weight(cloud, v_prev, v_next, p, dt, proposal="transition",
                         scheme="multinomial", rng=None, eps=EPS_INTERIOR,
                         ess_threshold=0.0):
    """One filter step: resample ancestors, propose new particles, reweight."""
    if proposal not in PROPOSAL_IDS:
        raise ConfigError(f"unknown proposal {proposal!r}")
    if scheme not in SCHEME_IDS:
        raise ConfigError(f"unknown resampling scheme {scheme!r}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    k = len(cloud.particles)
    uniforms = rng.random(k)
    normals = rng.standard_normal(k)
    anc, particles, weights, _ = _fallback.filter_step(
        float(v_prev), float(v_next), float(dt), p.as_array(),
        cloud.particles, cloud.weights, uniforms, normals,
        PROPOSAL_IDS[proposal], SCHEME_IDS[scheme], eps, ess_threshold,
        cloud.step + 1,
    )
    return ParticleCloud(step=cloud.step + 1, particles=particles,
                         weights=weights, ancestors=anc)


def _weighted_quantile(particles, weights, q):
    """Per-row weighted quantile (smallest value whose cumulative weight >= q)."""
    order = np.argsort(particles, axis=1)
    ps = np.take_along_axis(particles, order, axis=1)
    ws = np.take_along_axis(weights, order, axis=1)
    cw = np.cumsum(ws, axis=1)
    idx = np.argmax(cw >= q, axis=1)
    return ps[np.arange(len(ps)), idx]


def filter(obs, p, k=100, proposal="transition", scheme="multinomial",
           seed=None, prior=None, eps=EPS_INTERIOR, ess_threshold=0.0,
           backend=None, dt=None):
    """Filter the hidden gating path from a voltage record.

    ``obs`` is a Trajectory (its ``u`` is ignored) or a plain array with
    ``dt`` given.  Returns a :class:`FilterOutput` with per-step weighted
    mean and central 95% interval, and a log normalizing-constant
    estimate accumulated from the per-step mean unnormalized weights.
    """
    if isinstance(obs, Trajectory):
        v = obs.v
        dt = obs.dt
    else:
        v = np.asarray(obs, dtype=np.float64)
        if dt is None:
            raise ConfigError("dt is required when obs is a plain array")
    if len(v) < 2:
        raise ConfigError("need at least two observations to filter")
    if k < 1:
        raise ConfigError("need at least one particle")
    if proposal not in PROPOSAL_IDS:
        raise ConfigError(f"unknown proposal {proposal!r}")
    if scheme not in SCHEME_IDS:
        raise ConfigError(f"unknown resampling scheme {scheme!r}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    prior = prior or PriorConfig()
    particles0 = prior.sample(rng, k, eps)
    weights0 = np.full(k, 1.0 / k)

    n = len(v) - 1
    uniforms = np.empty((n, k))
    normals = np.empty((n, k))
    for i in range(n):  # drawn per step, in the propagate_and_weight order
        uniforms[i] = rng.random(k)
        normals[i] = rng.standard_normal(k)

    impl = get_backend(backend)
    particles, weights, ancestors, log_mean_w = impl.smc_filter(
        np.ascontiguousarray(v), float(dt), p.as_array(),
        particles0, weights0, normals, uniforms,
        PROPOSAL_IDS[proposal], SCHEME_IDS[scheme], eps, ess_threshold,
    )
    mean_u = np.sum(particles * weights, axis=1)
    lo95 = _weighted_quantile(particles, weights, 0.025)
    hi95 = _weighted_quantile(particles, weights, 0.975)
    return FilterOutput(
        dt=float(dt), particles=particles, weights=weights, ancestors=ancestors,
        mean_u=mean_u, lo95=lo95, hi95=hi95,
        log_norm_const=float(np.sum(log_mean_w)),
        k=k, proposal=proposal, scheme=scheme, seed=seed,
    )


def sample_smoothing_path(out, rng=None):
    """Draw one full hidden path: final slot by weight, then ancestor tracing."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    weights = out.weights[-1]
    cdf = np.cumsum(weights)
    idx = int(min(np.searchsorted(cdf, rng.random() * cdf[-1]), len(cdf) - 1))
    n1 = len(out.particles)
    path = np.empty(n1)
    for i in range(n1 - 1, 0, -1):
        path[i] = out.particles[i, idx]
        idx = int(out.ancestors[i, idx])
    path[0] = out.particles[0, idx]
    return path


def estimate_expectation(out, f):
    """Weighted mean of ``f`` over the final cloud."""
    return float(np.sum(out.weights[-1] * f(out.particles[-1])))


def variance_decay(obs, p, k_values=(25, 100, 400), reps=50, seed=None,
                   proposal="transition", scheme="multinomial", backend=None):
    """Spread of the filtered terminal mean across independent runs per K.

    Returns ``(rows, slope)`` where rows are (K, sd of the final weighted
    mean over ``reps`` runs) and slope is the log-log regression slope,
    expected near -1/2.
    """
    ss = np.random.SeedSequence(seed)
    rows = []
    for k in k_values:
        estimates = []
        for child in ss.spawn(reps):
            out = filter(obs, p, k=k, proposal=proposal, scheme=scheme,
                         seed=np.random.default_rng(child), backend=backend)
            estimates.append(estimate_expectation(out, lambda u: u))
        rows.append((int(k), float(np.std(estimates, ddof=1))))
    ks = np.log([r[0] for r in rows])
    sds = np.log([r[1] for r in rows])
    slope = float(np.polyfit(ks, sds, 1)[0])
    return rows, slope
