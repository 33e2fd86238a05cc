"""Compiled vs numpy-fallback timings for the loop kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on both backends with identical inputs; outputs are
checked for equality before timings are reported.
"""

import argparse
import time

import numpy as np

from matchkit import _kernels


def _inputs(rng):
    xy = rng.uniform(0, 256, (4000, 2))
    score = rng.uniform(size=4000)
    order = np.lexsort((xy[:, 0], xy[:, 1], -score)).astype(np.int64)
    resp = np.ascontiguousarray(rng.uniform(size=(256, 256)))
    dog = np.ascontiguousarray(rng.normal(size=(6, 256, 256)))
    bits_a = rng.integers(0, 2**63, (512, 4), dtype=np.uint64)
    bits_b = rng.integers(0, 2**63, (512, 4), dtype=np.uint64)
    return {
        "greedy_nms": (xy, order, 3.0),
        "count_pairs_within": (xy, 3.0),
        "local_max_2d": (resp, 0.5, 8),
        "extrema_3d": (dog, 0.5, 8),
        "hamming_matrix": (bits_a, bits_b),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.compiled is None:
        print("compiled kernels are not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, inp in _inputs(rng).items():
        tp, out_p = _best(getattr(_kernels.python, name), inp, args.repeat)
        if _kernels.compiled is None:
            print(f"{name:<20}{tp * 1e3:>12.2f}{'-':>12}{'-':>10}")
            continue
        tc, out_c = _best(getattr(_kernels.compiled, name), inp, args.repeat)
        if not _same(out_p, out_c):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<20}{tp * 1e3:>12.2f}{tc * 1e3:>12.2f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
