"""Time the compiled kernels against their pure-numpy twins.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is called once
to trigger compilation before timing; the best of ``--repeat`` runs is shown.
"""
import argparse
import timeit

import numpy as np

from pathbinomial import kernels
from pathbinomial._accel import NUMBA_ENABLED, njit


def rollback_case(n, seed=0):
    rng = np.random.default_rng(seed)
    terminal = np.maximum(100 * np.exp(np.linspace(-1, 1, n + 1)) - 100, 0.0)
    return terminal, rng.uniform(0.4, 0.6, n), np.full(n, np.exp(-0.02 / n))


def garch_case(T, seed=0):
    r = np.random.default_rng(seed).normal(0, 0.01, T)
    return r, 0.0005, 0.2, 0.1, 1e-5, 0.1, 0.05, 0.8, float(np.var(r))


def best_time(fn, args, repeat, number):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not NUMBA_ENABLED:
        print("numba disabled by PATHBINOMIAL_DISABLE_NUMBA; compiled column uses it anyway")
    compiled = {"rollback": njit(kernels._rollback_recombining_loop),
                "garch": njit(kernels._garch_filter_loop)}
    rows = []
    for n in (500, 2000, 8000):
        case = rollback_case(n)
        for keep in (False, True):
            number = 3 if n >= 8000 else 10
            t_nb = best_time(compiled["rollback"], case + (keep,), args.repeat, number)
            t_np = best_time(kernels._rollback_recombining_numpy, case + (keep,), args.repeat, number)
            rows.append((f"rollback n={n} keep={keep}", t_nb, t_np))
    for T in (1000, 5000, 50000):
        case = garch_case(T)
        t_nb = best_time(compiled["garch"], case, args.repeat, 20)
        t_np = best_time(kernels._garch_filter_numpy, case, args.repeat, 20)
        rows.append((f"garch filter T={T}", t_nb, t_np))
    print(f"{'kernel':32s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speed-up':>9s}")
    for name, a, b in rows:
        print(f"{name:32s} {1e3 * a:12.4f} {1e3 * b:12.4f} {b / a:9.1f}")


if __name__ == "__main__":
    main()
