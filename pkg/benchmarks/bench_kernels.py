"""Compare the compiled k-NN query kernel against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--sizes 500,2000,8000]

Both kernels run the same queries (every Y point, excluding itself) on the
same tree; the script checks that their outputs are identical and prints the
best-of-``repeat`` wall time for each.
"""
import argparse
import time

import numpy as np

from nnrdiv import _backend, build_index


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="500,2000,8000", help="comma-separated N = M")
    parser.add_argument("--dims", default="2,5", help="comma-separated dimensions")
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    if "compiled" not in _backend.KERNELS:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    print(f"{'N':>6} {'d':>3} {'k':>4} {'compiled s':>11} {'python s':>10} {'speedup':>8}")
    for d in (int(v) for v in args.dims.split(",")):
        for n in (int(v) for v in args.sizes.split(",")):
            rng = np.random.default_rng([n, d])
            idx = build_index(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
            pos = idx.y_positions()
            queries = np.ascontiguousarray(idx.points[pos])
            timings = {}
            results = {}
            for name in ("compiled", "python"):
                kernel = _backend.KERNELS[name]
                timings[name], results[name] = best_time(
                    lambda: kernel(idx.tree, queries, args.k, pos, 2.0), args.repeat)
            for a, b in zip(results["compiled"], results["python"]):
                if not np.array_equal(a, b):
                    raise SystemExit(f"kernels disagree at N={n}, d={d}")
            print(f"{n:>6} {d:>3} {args.k:>4} {timings['compiled']:>11.4f} "
                  f"{timings['python']:>10.4f} {timings['python'] / timings['compiled']:>7.1f}x")


if __name__ == "__main__":
    main()
