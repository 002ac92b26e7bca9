"""Backend selection for the hot kernels.

Every accelerated kernel has two implementations: a numba ``@njit`` loop
kernel and a vectorised numpy path.  The numba path is used when numba is
importable, unless the environment variable ``URA_SIM_NO_NUMBA`` is set to a
truthy value.  ``set_backend`` switches at runtime (tests and the benchmark
use it to compare both paths).
"""
from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_TRUTHY = {"1", "true", "yes", "on"}

_use_numba = HAVE_NUMBA and os.environ.get("URA_SIM_NO_NUMBA", "").strip().lower() not in _TRUTHY


def njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def use_numba() -> bool:
    return _use_numba


def backend() -> str:
    return "numba" if _use_numba else "numpy"


def set_backend(name: str) -> None:
    global _use_numba
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _use_numba = name == "numba"
