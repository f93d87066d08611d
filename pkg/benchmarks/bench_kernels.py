"""Time the numba kernels against their numpy twins.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Sizes follow
the case study: 100 design points in 5 dimensions, 1000 projections up to
10^4 candidates, and a few hundred forecast curves on a 240-point grid.
Each kernel is compiled (one warm-up call) before timing.
"""

import argparse
import time

import numpy as np

from fhm import _accel


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x1 = rng.uniform(-1, 1, (2000, 5))
    x2 = rng.uniform(-1, 1, (100, 5))
    lam = np.array([0.5, 1.0, 2.0, 4.0, 1.5])
    proj = rng.standard_normal((10_000, 1000))
    ref = rng.standard_normal(1000)
    curves = rng.standard_normal((300, 240)).cumsum(axis=1)
    return {
        "powexp_corr 2000x100x5": ("powexp_corr", (x1, x2, lam)),
        "mean_abs_diff 10000x1000": ("mean_abs_diff", (proj, ref)),
        "band_depth 300x240": ("band_depth", (curves,)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<28}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for label, (name, inputs) in cases(rng).items():
        f_np = getattr(_accel, f"{name}_numpy")
        f_nb = getattr(_accel, f"{name}_numba")
        t_np = best_of(f_np, inputs, args.repeat)
        t_nb = best_of(f_nb, inputs, args.repeat)
        diff = float(np.max(np.abs(f_np(*inputs) - f_nb(*inputs))))
        print(f"{label:<28}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
