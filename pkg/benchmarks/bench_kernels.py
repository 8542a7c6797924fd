#!/usr/bin/env python3
"""Time the numba and numpy flavours of the hot kernels side by side.

    python3 benchmarks/bench_kernels.py [--n 256] [--repeat 20]
"""

import argparse
import time

import numpy as np

from degenlab import kernels
from degenlab._accel import HAVE_NUMBA


def best_of(fn, args, repeat):
    fn(*args)  # warm up (JIT compile)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return min(times)


def energy_case(n, rng):
    u = rng.standard_normal((n + 1, n + 1))
    w = rng.uniform(0.5, 1.5, (n, n, 4))
    return u, w, 1.0 / n, 1.0 / n, 1.5, 1e-8


def bracket_case(n, rng):
    m = n * n
    phi = rng.uniform(1.0, 10.0, m)
    dphi = -rng.uniform(0.1, 5.0, m)
    ddphi = rng.standard_normal(m)
    lap = rng.standard_normal(m)
    return phi, dphi, ddphi, lap, 24.0, 2.5


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    cases = [
        ("energy_gradient", energy_case(args.n, rng), kernels.energy_gradient_numpy, kernels.energy_gradient_numba),
        ("divergence_bracket", bracket_case(args.n, rng), kernels.divergence_bracket_numpy, kernels.divergence_bracket_numba),
    ]
    print(f"numba available: {HAVE_NUMBA}; grid {args.n}x{args.n}")
    print(f"{'kernel':<20} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>8}")
    for name, case, f_np, f_nb in cases:
        t_np = best_of(f_np, case, args.repeat)
        if HAVE_NUMBA:
            t_nb = best_of(f_nb, case, args.repeat)
            print(f"{name:<20} {t_np * 1e3:12.3f} {t_nb * 1e3:12.3f} {t_np / t_nb:8.2f}")
        else:
            print(f"{name:<20} {t_np * 1e3:12.3f} {'n/a':>12} {'n/a':>8}")


if __name__ == "__main__":
    main()
