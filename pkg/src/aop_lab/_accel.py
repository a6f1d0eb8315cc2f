"""Optional numba acceleration.

Kernels in :mod:`aop_lab.kernels` are written twice: a ``@njit`` loop version
and a vectorised numpy version. Setting ``AOP_LAB_DISABLE_JIT=1`` (or running
without numba installed) selects the numpy path everywhere.
"""
import os

_DISABLED = os.environ.get("AOP_LAB_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit as _numba_njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba_njit = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator if numba is absent."""
    kwargs.setdefault("cache", True)
    if _numba_njit is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _numba_njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"
