"""Selects the compiled extension when available, the numpy fallback otherwise.

Both backends expose ``euler_step_scalar``, ``euler_path``,
``resample_indices`` and ``smc_filter`` with identical semantics; the
active one is chosen at import time and can be forced with the
environment variable ``ML_SAEM_BACKEND`` (``compiled`` or ``python``).
"""

from __future__ import annotations

import os

from . import _fallback
from .errors import ConfigError

try:
    from . import _kernels
except ImportError:  # pragma: no cover - depends on the build environment
    _kernels = None

HAVE_COMPILED = _kernels is not None


def get_backend(name=None):
    """Return the backend module for ``name`` (default: env var or auto)."""
    if name is None:
        name = os.environ.get("ML_SAEM_BACKEND", "auto")
    if name in ("auto", ""):
        return _kernels if HAVE_COMPILED else _fallback
    if name == "python":
        return _fallback
    if name == "compiled":
        if not HAVE_COMPILED:
            raise ConfigError("compiled backend requested but extension not built")
        return _kernels
    raise ConfigError(f"unknown backend {name!r} (use 'compiled' or 'python')")


active = get_backend()


def active_name():
    return "compiled" if active is _kernels else "python"
