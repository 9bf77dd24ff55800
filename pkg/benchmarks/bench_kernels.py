"""Time the compiled and numpy kernels side by side.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one line per (kernel, dimension, size) with the best-of-``repeat``
time for each backend and the speed-up.  Also checks the two backends agree.
"""

import argparse
import timeit

import numpy as np

from anderson_lab import _pykernels

try:
    from anderson_lab import _ckernels
except ImportError:
    _ckernels = None

CASES = [(1, 4095), (1, 65535), (2, 127), (2, 511), (3, 31), (3, 63)]


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the numpy kernels are available")
    rng = np.random.default_rng(0)

    print(f"{'kernel':<16}{'d':>3}{'sites':>10}{'numpy [ms]':>13}{'cython [ms]':>13}{'speed-up':>10}")
    for d, n in CASES:
        size = n**d
        diag = rng.standard_normal(size) + 2 * d
        u = rng.standard_normal(size)
        out = np.empty(size)
        t_py = best_time(lambda: _pykernels.stencil_matvec(diag, u, 1.0, d, n, out), args.repeat)
        line = f"{'stencil_matvec':<16}{d:>3}{size:>10}{1e3 * t_py:>13.3f}"
        if _ckernels is not None:
            t_c = best_time(lambda: _ckernels.stencil_matvec(diag, u, 1.0, d, n, out), args.repeat)
            diff = np.max(np.abs(_ckernels.stencil_matvec(diag, u, 1.0, d, n)
                                 - _pykernels.stencil_matvec(diag, u, 1.0, d, n)))
            line += f"{1e3 * t_c:>13.3f}{t_py / t_c:>10.1f}   max diff {diff:.1e}"
        print(line)

    for n in (1023, 16383):
        diag = rng.standard_normal(n) + 2.0
        x = 0.5
        t_py = best_time(lambda: _pykernels.sturm_count(diag, -1.0, x), max(3, args.repeat // 5))
        line = f"{'sturm_count':<16}{1:>3}{n:>10}{1e3 * t_py:>13.3f}"
        if _ckernels is not None:
            t_c = best_time(lambda: _ckernels.sturm_count(diag, -1.0, x), args.repeat)
            same = _ckernels.sturm_count(diag, -1.0, x) == _pykernels.sturm_count(diag, -1.0, x)
            line += f"{1e3 * t_c:>13.3f}{t_py / t_c:>10.1f}   counts agree: {same}"
        print(line)


if __name__ == "__main__":
    main()
