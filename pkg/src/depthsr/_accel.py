"""Numba switch for the hot kernels.

Set ``DEPTHSR_DISABLE_NUMBA=1`` before import to force the pure-numpy
path (numba is also skipped when it is not installed).
"""
import os

_FLAG = "DEPTHSR_DISABLE_NUMBA"

# prefer OpenMP/workqueue; older TBB builds only produce a warning
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda func: func


def numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and numba_requested()

__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit", "prange", "numba_requested"]
