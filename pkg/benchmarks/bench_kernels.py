"""Compare the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from dars import _fallback

try:
    from dars import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    mas_in = rng.normal(size=(30, 200))
    dtw_in = rng.random(size=(150, 180))
    ref = rng.integers(0, 50, size=60)
    hyp = rng.integers(0, 50, size=70)
    return {
        "mas_path 30x200": (lambda m: m.mas_path(mas_in)),
        "dtw_path 150x180": (lambda m: m.dtw_path(dtw_in)),
        "edit_distance 60/70": (lambda m: m.edit_distance(ref, hyp)),
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:24}{py:12.2f}{'n/a':>12}{'':>10}")
            continue
        # results must agree before timing means anything
        a, b = fn(_fallback), fn(_kernels)
        if isinstance(a, tuple):
            assert np.array_equal(a[0], b[0]) and np.isclose(a[1], b[1]), name
        else:
            assert a == b, name
        cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:24}{py:12.2f}{cy:12.3f}{py / cy:9.0f}x")


if __name__ == "__main__":
    main()
