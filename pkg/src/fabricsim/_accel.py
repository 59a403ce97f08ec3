"""Numba switch for the hot kernels.

Set ``FABRICSIM_NUMBA=0`` to run every kernel as plain Python/numpy.
"""

import os

_FLAG = os.environ.get("FABRICSIM_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


def njit(func):
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
