"""Euler-Maruyama simulation at a fine step with subsampling to the observation grid."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model
from ._backend import get_backend
from .errors import ConfigError


@dataclass
class Trajectory:
    """Uniformly sampled (V, U) path; observation records carry V only.

    ``t`` starts at 0 and advances by ``dt`` (ms).  ``seed`` records how
    the path was generated (None for externally supplied data).
    """

    dt: float
    v: np.ndarray
    u: np.ndarray | None = None
    seed: object = None

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.v.ndim != 1 or len(self.v) < 1:
            raise ConfigError("trajectory needs at least one V value")
        if not self.dt > 0:
            raise ConfigError("trajectory dt must be positive")
        if self.u is not None:
            self.u = np.asarray(self.u, dtype=np.float64)
            if self.u.shape != self.v.shape:
                raise ConfigError("v and u must have equal length")
            if np.any(self.u < -model.U_TOL) or np.any(self.u > 1.0 + model.U_TOL):
                raise ConfigError("gating values outside [0, 1]")
            self.u = np.clip(self.u, 0.0, 1.0)

    def __len__(self):
        return len(self.v)

    @property
    def t(self):
        return np.arange(len(self.v)) * self.dt

    def to_csv(self, path, include_u=True, metadata=None):
        """Write ``t,v[,u]`` rows with 17 significant digits.

        Reruns with identical inputs produce byte-identical files.
        """
        with_u = include_u and self.u is not None
        with open(path, "w") as fh:
            if metadata:
                pairs = " ".join(f"{k}={v}" for k, v in metadata.items())
                fh.write(f"# {pairs}\n")
            fh.write("t,v,u\n" if with_u else "t,v\n")
            for i in range(len(self.v)):
                t = i * self.dt
                if with_u:
                    fh.write(f"{t:.17g},{self.v[i]:.17g},{self.u[i]:.17g}\n")
                else:
                    fh.write(f"{t:.17g},{self.v[i]:.17g}\n")


def read_trajectory(path, grid_rtol=1e-9):
    """Read a trajectory CSV written by :meth:`Trajectory.to_csv`.

    Returns ``(Trajectory, metadata)``.  The time grid must be uniform
    within ``grid_rtol`` relative tolerance (the estimation model assumes
    a constant observation step).
    """
    metadata = {}
    rows = []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    if "=" in item:
                        key, _, value = item.partition("=")
                        metadata[key] = value
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                if header[:2] != ["t", "v"]:
                    raise ConfigError(f"{path}: expected header t,v[,u]")
                continue
            rows.append([float(c) for c in line.split(",")])
    if header is None or len(rows) < 2:
        raise ConfigError(f"{path}: need a header and at least two rows")
    data = np.asarray(rows)
    t = data[:, 0]
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > grid_rtol * abs(dt):
        raise ConfigError(f"{path}: observation grid is not uniform")
    u = data[:, 2] if len(header) > 2 and header[2] == "u" else None
    return Trajectory(dt=float(dt), v=data[:, 1], u=u, seed=metadata.get("seed")), metadata


def euler_step(state, p, dt, noise, backend=None):
    """One discretization step from ``state = (v, u)``.

    ``noise`` is a pair of independent standard normals; with ``p.rho``
    nonzero they are mixed through the correlated noise matrix.  The new
    gating value is clamped to [0, 1].
    """
    v, u = state
    if not dt > 0:
        raise ValueError("dt must be positive")
    model._check_u(u)
    u = min(max(float(u), 0.0), 1.0)
    impl = get_backend(backend)
    return impl.euler_step_scalar(float(v), u, float(dt), p.as_array(),
                                  float(noise[0]), float(noise[1]))


def simulate_path(p, v0, u0, delta, steps, seed=None, backend=None):
    """Simulate ``steps`` Euler steps of size ``delta`` from ``(v0, u0)``.

    Reproducible: a given ``seed`` yields a bit-identical Trajectory.
    Noise is drawn once up front so distinct paths can use independent
    SeedSequence substreams.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if not delta > 0:
        raise ConfigError("delta must be positive")
    model._check_u(u0)
    u0 = min(max(float(u0), 0.0), 1.0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal((steps, 2))
    impl = get_backend(backend)
    v, u = impl.euler_path(float(v0), u0, float(delta), p.as_array(),
                           np.ascontiguousarray(noise[:, 0]),
                           np.ascontiguousarray(noise[:, 1]))
    return Trajectory(dt=float(delta), v=np.asarray(v), u=np.asarray(u), seed=seed)


def subsample(traj, stride):
    """Keep every ``stride``-th point (index 0 retained); dt scales by ``stride``.

    A tail shorter than one full stride is dropped.
    """
    stride = int(stride)
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if len(traj) <= stride:
        raise ConfigError("trajectory too short for this stride")
    last = ((len(traj) - 1) // stride) * stride
    idx = np.arange(0, last + 1, stride)
    return replace(
        traj,
        dt=traj.dt * stride,
        v=traj.v[idx],
        u=None if traj.u is None else traj.u[idx],
    )
