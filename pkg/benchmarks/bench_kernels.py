"""Time the compiled kernels against their numpy twins.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``
"""

import argparse
import timeit

import numpy as np

from lfextrap import _kernels_py

try:
    from lfextrap import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    src = rng.random((8, 64, 64, 4)).astype(np.float32)
    shifts = rng.uniform(-3, 3, (8, 4))
    xpad = rng.random((8, 34, 34, 6, 16)).astype(np.float32)
    views = rng.random((64, 128, 128))
    dy, dx = rng.uniform(-3, 3, 64), rng.uniform(-3, 3, 64)
    cols = _kernels_py.im2col3d(xpad, (32, 32, 4), (1, 1, 1))
    return {
        "shift_x": lambda k: k.shift_x(src, shifts, 0),
        "shift_x_adjoint": lambda k: k.shift_x_adjoint(src, shifts, 0),
        "im2col3d": lambda k: k.im2col3d(xpad, (32, 32, 4), (1, 1, 1)),
        "col2im3d": lambda k: k.col2im3d(cols, xpad.shape, (1, 1, 1)),
        "shift2d_accumulate": lambda k: k.shift2d_accumulate(views, dy, dx),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':20s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    total_py = total_c = 0.0
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        total_py += t_py
        total_c += t_c
        print(f"{name:20s} {1e3 * t_py:10.2f} {1e3 * t_c:10.2f} {t_py / t_c:7.1f}x")
    print(f"{'total':20s} {1e3 * total_py:10.2f} {1e3 * total_c:10.2f} {total_py / total_c:7.1f}x")


if __name__ == "__main__":
    main()
