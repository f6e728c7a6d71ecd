"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per (kernel, size) with the median time of each backend and
the speedup. Both backends are checked to agree before timing.
"""
import argparse
import statistics
import sys
import timeit

import numpy as np

from nlora_lab import _kernels_py
from nlora_lab.matrix import MAX_SVD_SWEEPS, SVD_TOL

try:
    from nlora_lab import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _median_time(fn, repeat):
    number = 1
    # grow the loop count until one measurement takes ~20 ms
    while timeit.timeit(fn, number=number) < 0.02 and number < 10_000:
        number *= 2
    return statistics.median(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _cases(rng):
    for m, n in ((8, 4), (32, 4), (32, 32), (64, 64)):
        a = np.ascontiguousarray(rng.standard_normal((m, n)))
        yield "jacobi_svd", f"{m}x{n}", lambda k, a=a: k.jacobi_svd(a, MAX_SVD_SWEEPS, SVD_TOL)
    for m, n in ((32, 4), (64, 64), (256, 256)):
        w1 = np.where(rng.random((m, n)) < 0.3, rng.standard_normal((m, n)), 0.0)
        w2 = np.where(rng.random((m, n)) < 0.3, rng.standard_normal((m, n)), 0.0)
        yield "count_collisions", f"{m}x{n}", lambda k, w1=w1, w2=w2: k.count_collisions(w1, w2, 1e-5)


def _agree(name, py_out, c_out):
    if name == "count_collisions":
        return py_out == c_out
    s_py, s_c = np.sort(py_out[1]), np.sort(c_out[1])
    return np.allclose(s_py, s_c, rtol=1e-10, atol=1e-12)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'size':>9}{'numpy (s)':>13}{'cython (s)':>13}{'speedup':>9}")
    for name, size, call in _cases(rng):
        if not _agree(name, call(_kernels_py), call(_kernels_c)):
            print(f"{name} {size}: backends disagree", file=sys.stderr)
            return 1
        t_py = _median_time(lambda: call(_kernels_py), args.repeat)
        t_c = _median_time(lambda: call(_kernels_c), args.repeat)
        print(f"{name:<18}{size:>9}{t_py:>13.3e}{t_c:>13.3e}{t_py / t_c:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
