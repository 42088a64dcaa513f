"""Compiled vs NumPy interpolation kernels.

    python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]

Times both backends on the same inputs and checks that they agree.
"""

import argparse
import time

import numpy as np

from cransim.kernels import _fallback, farrow_coefficients, sinc_table

try:
    from cransim.kernels import _core
except ImportError:  # extension not built
    _core = None


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=2_000_000 // 4)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    n = args.samples
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    coeffs = np.ascontiguousarray(farrow_coefficients())
    step = 2e6 / 2**21
    n_out = int((n - 1) / step)
    table = np.ascontiguousarray(sinc_table())
    pos = np.sort(rng.uniform(0, n - 1, n))

    cases = {
        f"farrow {coeffs.shape[0]} taps x order {coeffs.shape[1] - 1}":
            lambda m: m.farrow(x, coeffs, 0.0, step, n_out),
        f"sinc_interp {table.shape[1]} taps": lambda m: m.sinc_interp(x, pos, table),
    }
    print(f"{n} input samples, best of {args.repeat}")
    print(f"{'kernel':32s} {'numpy s':>9s} {'cython s':>9s} {'speedup':>8s} {'max diff':>9s}")
    for name, run in cases.items():
        t_np, y_np = best_of(lambda: run(_fallback), args.repeat)
        if _core is None:
            print(f"{name:32s} {t_np:9.3f} {'n/a':>9s}")
            continue
        t_cy, y_cy = best_of(lambda: run(_core), args.repeat)
        diff = float(np.max(np.abs(y_np - y_cy)))
        print(f"{name:32s} {t_np:9.3f} {t_cy:9.3f} {t_np / t_cy:7.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
