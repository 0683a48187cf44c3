"""Numba switch.

Set ``PATHBINOMIAL_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful
for debugging and for the benchmark).  The flag is read once at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("PATHBINOMIAL_DISABLE_NUMBA", "").strip().lower()
NUMBA_ENABLED = numba is not None and _flag not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it as-is."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
