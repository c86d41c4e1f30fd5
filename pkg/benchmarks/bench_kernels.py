"""Compare the compiled rectangle-clipping kernel against the Python twin.

The kernel sits inside every rotated-IoU evaluation, so anchor matching on
a full frame runs it tens of thousands of times; this shows what the
extension buys. Run: python benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from lidarocc import _kernels
from lidarocc._kernels import _rectclip_py


def random_rects(rng, n):
    out = np.empty((n, 5))
    out[:, 0:2] = rng.uniform(-40, 40, size=(n, 2))
    out[:, 2:4] = rng.uniform(0.5, 5.0, size=(n, 2))
    out[:, 4] = rng.uniform(-np.pi, np.pi, size=n)
    return out


def timeit(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=50_000,
                        help="rect pairs for the pairwise benchmark")
    parser.add_argument("--anchors", type=int, default=2_000,
                        help="anchors for the matrix benchmark (x 20 boxes)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"active backend: {_kernels.BACKEND}")
    if _kernels.BACKEND != "compiled":
        print("note: extension not built; comparing Python against itself")

    a = random_rects(rng, args.pairs)
    b = random_rects(rng, args.pairs)
    t_fast = timeit(_kernels.rect_intersection_areas, a, b)
    t_py = timeit(_rectclip_py.rect_intersection_areas, a, b, repeats=1)
    print(f"pairwise areas, n={args.pairs}:")
    print(f"  active : {t_fast * 1e3:8.1f} ms  ({args.pairs / t_fast / 1e6:6.2f} M pairs/s)")
    print(f"  python : {t_py * 1e3:8.1f} ms  ({args.pairs / t_py / 1e6:6.2f} M pairs/s)")
    print(f"  speedup: {t_py / t_fast:6.1f}x")

    anchors = random_rects(rng, args.anchors)
    gts = random_rects(rng, 20)
    t_fast = timeit(_kernels.rect_intersection_matrix, anchors, gts)
    t_py = timeit(_rectclip_py.rect_intersection_matrix, anchors, gts, repeats=1)
    n = args.anchors * 20
    print(f"matrix areas, {args.anchors} anchors x 20 boxes:")
    print(f"  active : {t_fast * 1e3:8.1f} ms  ({n / t_fast / 1e6:6.2f} M pairs/s)")
    print(f"  python : {t_py * 1e3:8.1f} ms  ({n / t_py / 1e6:6.2f} M pairs/s)")
    print(f"  speedup: {t_py / t_fast:6.1f}x")

    fast = _kernels.rect_intersection_areas(a[:1000], b[:1000])
    ref = _rectclip_py.rect_intersection_areas(a[:1000], b[:1000])
    print(f"max backend disagreement on 1000 pairs: {np.abs(fast - ref).max():.2e}")


if __name__ == "__main__":
    main()
