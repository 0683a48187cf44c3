"""Hot numerical loops.

Every kernel exists twice: a plain loop that numba compiles, and a vectorised
numpy version.  The public names (``rollback_recombining``, ``garch_filter``)
resolve to the compiled loop unless ``PATHBINOMIAL_DISABLE_NUMBA`` is set; both
variants are importable under their private names so tests and the benchmark
can compare them directly.
"""
import numpy as np
from scipy.signal import lfilter

from ._accel import NUMBA_ENABLED, njit


def level_offset(k):
    """Start of level ``k`` inside a flat triangular level store."""
    return k * (k + 1) // 2


# --------------------------------------------------------------------------
# recombining rollback with per-step probability and discount factor
# --------------------------------------------------------------------------

def _rollback_recombining_loop(terminal, q, disc, keep_levels):
    n = q.shape[0]
    v = terminal.copy()
    if keep_levels:
        store = np.empty((n + 1) * (n + 2) // 2)
        off = n * (n + 1) // 2
        for j in range(n + 1):
            store[off + j] = v[j]
    else:
        store = np.empty(0)
    for k in range(n - 1, -1, -1):
        qk = q[k]
        dk = disc[k]
        for j in range(k + 1):
            v[j] = dk * (qk * v[j + 1] + (1.0 - qk) * v[j])
        if keep_levels:
            off = k * (k + 1) // 2
            for j in range(k + 1):
                store[off + j] = v[j]
    return v[0], store


def _rollback_recombining_numpy(terminal, q, disc, keep_levels):
    n = q.shape[0]
    v = np.array(terminal, dtype=np.float64)
    store = np.empty((n + 1) * (n + 2) // 2) if keep_levels else np.empty(0)
    if keep_levels:
        store[level_offset(n):] = v
    for k in range(n - 1, -1, -1):
        v = disc[k] * (q[k] * v[1:] + (1.0 - q[k]) * v[:-1])
        if keep_levels:
            off = level_offset(k)
            store[off:off + k + 1] = v
    return v[0], store


# --------------------------------------------------------------------------
# ARMA(1,1) mean filter + GJR-GARCH(1,1) variance recursion
# --------------------------------------------------------------------------

def _garch_filter_loop(returns, mu, phi, theta, alpha0, alpha1, gamma1, beta1, sigma2_0):
    n = returns.shape[0]
    a = np.empty(n)
    s2 = np.empty(n)
    a[0] = returns[0] - mu
    s2[0] = sigma2_0
    for k in range(1, n):
        a[k] = returns[k] - mu - phi * (returns[k - 1] - mu) - theta * a[k - 1]
        lev = gamma1 if a[k - 1] < 0.0 else 0.0
        s2[k] = alpha0 + (alpha1 + lev) * a[k - 1] * a[k - 1] + beta1 * s2[k - 1]
    return a, s2


def _garch_filter_numpy(returns, mu, phi, theta, alpha0, alpha1, gamma1, beta1, sigma2_0):
    returns = np.asarray(returns, dtype=np.float64)
    e = np.empty_like(returns)
    e[0] = returns[0] - mu
    e[1:] = returns[1:] - mu - phi * (returns[:-1] - mu)
    a = lfilter([1.0], [1.0, theta], e)
    x = np.empty_like(returns)
    x[0] = sigma2_0
    x[1:] = alpha0 + (alpha1 + gamma1 * (a[:-1] < 0.0)) * a[:-1] ** 2
    s2 = lfilter([1.0], [1.0, -beta1], x)
    return a, s2


if NUMBA_ENABLED:
    rollback_recombining = njit(_rollback_recombining_loop)
    garch_filter = njit(_garch_filter_loop)
else:
    rollback_recombining = _rollback_recombining_numpy
    garch_filter = _garch_filter_numpy


def rollback_general(terminal, q, disc):
    """Backward induction on a non-recombining tree.

    Level ``k`` holds ``2**k`` nodes; node ``i`` has its down child at ``2*i``
    and its up child at ``2*i + 1``.  ``q`` and ``disc`` may be per-step
    scalars (shape ``(n,)``) or per-node arrays (a list of length-``2**k``
    arrays).  Returns the list of value levels, root first.
    """
    n = len(q)
    levels = [None] * (n + 1)
    v = np.asarray(terminal, dtype=np.float64)
    levels[n] = v
    for k in range(n - 1, -1, -1):
        v = disc[k] * (q[k] * v[1::2] + (1.0 - q[k]) * v[0::2])
        levels[k] = v
    return levels
