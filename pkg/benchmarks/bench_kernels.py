"""Numba kernels vs their numpy fallbacks.

Run: python3 benchmarks/bench_kernels.py [--n 200000] [--runs 5]

Both variants are called directly, so the CHIRALQUENCH_NUMBA flag does not
matter here. Results are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chiralquench import kernels
from chiralquench._accel import HAS_NUMBA


def _best(fn, runs):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _cases(n, rng):
    h = rng.normal(size=(n, 5))
    psi = rng.normal(size=(n, 4)) + 1j * rng.normal(size=(n, 4))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    t = rng.uniform(0, 10, size=n)
    v = rng.normal(size=(3, n, 3))
    a, b, c = v / np.linalg.norm(v, axis=-1, keepdims=True)
    times = np.linspace(0, 6.5, 64)
    rates = np.array([0.05, 2.0, 2.0, 0.05, 0.05])
    coef = kernels._oscillation_coefficients(h, psi)
    return {
        "evolve_batch": (
            lambda: kernels.evolve_batch_numpy(h, psi, t),
            lambda: kernels.evolve_batch_numba(h, psi, t),
        ),
        "windowed_average": (
            lambda: kernels.windowed_average_batch_numpy(h, psi, times, rates, 2 * np.pi),
            lambda: kernels._windowed_numba(*coef, times, rates, 2 * np.pi),
        ),
        "solid_angles": (
            lambda: kernels.solid_angles_numpy(a, b, c),
            lambda: kernels.solid_angles_numba(a, b, c),
        ),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        print("numba not installed; nothing to compare")
        return

    rng = np.random.default_rng(args.seed)
    print(f"n = {args.n}, best of {args.runs}")
    print(f"{'kernel':<18} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8} {'max diff':>10}")
    for name, (f_np, f_nb) in _cases(args.n, rng).items():
        diff = float(np.max(np.abs(f_np() - f_nb())))  # also JIT warm-up
        t_np = _best(f_np, args.runs)
        t_nb = _best(f_nb, args.runs)
        print(f"{name:<18} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f} {diff:10.1e}")


if __name__ == "__main__":
    main()
