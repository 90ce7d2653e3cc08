"""Backend selection for the numeric kernels.

Set ``LATEMVS_BACKEND=numpy`` to bypass numba and run the vectorized numpy
kernels instead. The default is ``numba`` when it can be imported.
"""
from __future__ import annotations

import contextlib
import os
import warnings

# the system TBB is too old for numba; pick the portable layer unless told otherwise
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range

_VALID = ("numba", "numpy")


def _initial_backend() -> str:
    name = os.environ.get("LATEMVS_BACKEND", "numba").strip().lower()
    if name not in _VALID:
        raise ValueError(f"LATEMVS_BACKEND must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:  # pragma: no cover
        warnings.warn("numba is not installed; falling back to numpy kernels", RuntimeWarning)
        name = "numpy"
    return name


_backend = _initial_backend()


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def set_num_threads(n: int) -> None:
    """Set the numba worker count; a no-op on the numpy backend."""
    if HAS_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


__all__ = ["HAS_NUMBA", "njit", "prange", "backend", "set_backend", "use_backend", "set_num_threads"]
