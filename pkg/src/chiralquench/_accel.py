"""Numba switch.

Set ``CHIRALQUENCH_NUMBA=0`` before import to force the pure-numpy kernels.
When numba is missing the numpy path is used regardless.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("CHIRALQUENCH_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "off",
    "no",
)


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op decorator without numba."""
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)
