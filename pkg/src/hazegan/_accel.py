"""Numba shim.

Kernels are written twice: an ``@njit`` loop version and a vectorized numpy
version. ``HAZEGAN_NUMBA=0`` in the environment (or a missing numba install)
selects the numpy path; :func:`set_backend` switches at runtime.
"""
import os
from contextlib import contextmanager

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe, which warns on older system TBB builds
        numba.config.THREADING_LAYER = "omp"
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


_FLAG = os.environ.get("HAZEGAN_NUMBA", "1").strip().lower()
_backend = "numba" if HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off") else "numpy"


def get_backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextmanager
def backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


__all__ = ["njit", "prange", "HAVE_NUMBA", "get_backend", "set_backend", "backend"]
