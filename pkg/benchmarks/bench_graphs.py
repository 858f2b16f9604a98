"""Benchmark the graph-construction hot kernel: compiled vs numpy fallback.

The pairwise-cosine threshold pass is O(n^2 * d); both implementations should
show ~4x wall time when n doubles. Run with:

    python benchmarks/bench_graphs.py --sizes 256,512,1024,2048 --dim 256
"""

import argparse
import os
import time

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np


def timed_build(x, threshold, repeats):
    from mmorient.cmrl import build_adjacency

    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        build_adjacency(x, threshold)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="256,512,1024,2048")
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--threshold", type=float, default=0.75)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    from mmorient.cmrl import kernel_available

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)
    print(f"dim={args.dim} threshold={args.threshold} repeats={args.repeats} "
          f"(best-of), kernel built: {kernel_available()}")
    header = f"{'n':>6} {'kernel ms':>12} {'numpy ms':>12} {'speedup':>9}"
    print(header)
    prev = {}
    for n in sizes:
        x = rng.standard_normal((n, args.dim))
        row = {"n": n}
        if kernel_available():
            os.environ.pop("MMORIENT_PURE", None)
            row["kernel"] = timed_build(x, args.threshold, args.repeats)
        os.environ["MMORIENT_PURE"] = "1"
        try:
            row["numpy"] = timed_build(x, args.threshold, args.repeats)
        finally:
            os.environ.pop("MMORIENT_PURE", None)
        kern = f"{row['kernel'] * 1e3:12.2f}" if "kernel" in row else f"{'n/a':>12}"
        speed = (f"{row['numpy'] / row['kernel']:9.2f}" if "kernel" in row else f"{'n/a':>9}")
        print(f"{n:>6} {kern} {row['numpy'] * 1e3:12.2f} {speed}")
        if prev:
            ratios = []
            for key in ("kernel", "numpy"):
                if key in row and key in prev:
                    ratios.append(f"{key} x{row[key] / prev[key]:.2f}")
            print(f"       scaling vs n={prev['n']}: " + ", ".join(ratios))
        prev = row


if __name__ == "__main__":
    main()
