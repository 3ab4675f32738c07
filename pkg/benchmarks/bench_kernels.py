"""Compare the numba and pure-numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--L 8 32] [--batch 64] [--reps 10]

Prints the median wall-clock per call for each kernel and path, plus the
speed-up of the compiled path. The first (compiling) call is excluded.
"""
import argparse
import statistics
import time

import numpy as np

from transbeam import kernels
from transbeam.baselines import mmse_beamformer


def median_time(fn, reps):
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(L, batch, rng):
    h = (rng.standard_normal((batch, L, L)) + 1j * rng.standard_normal((batch, L, L))) / np.sqrt(2)
    w = mmse_beamformer(h, 1.0, 1.0)
    x = rng.standard_normal((batch, L, L)) + 1j * rng.standard_normal((batch, L, L))
    a = x @ np.conj(np.swapaxes(x, -1, -2)) + L * np.eye(L)
    rhs = np.ascontiguousarray(np.swapaxes(h, -1, -2))
    wm = min(batch, 8)
    return {
        "sum_rate": lambda impl: impl.sum_rate(h, w),
        "cholesky_solve": lambda impl: impl.cholesky_solve(a, rhs),
        f"wmmse (x{wm})": lambda impl: [impl.wmmse(h[b], w[b], 1.0, 500, 1e-5, 60)
                                        for b in range(wm)],
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--L", type=int, nargs="+", default=[8, 32])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--reps", type=int, default=10)
    args = p.parse_args(argv)
    if kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'L':>4}{'numpy [ms]':>13}{'numba [ms]':>13}{'speed-up':>10}")
    for L in args.L:
        for name, fn in cases(L, args.batch, rng).items():
            t_np = median_time(lambda: fn(kernels.numpy_impl), args.reps)
            t_nb = median_time(lambda: fn(kernels.numba_impl), args.reps)
            print(f"{name:<18}{L:>4}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
