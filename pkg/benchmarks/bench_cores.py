#!/usr/bin/env python3
"""Wall-time comparison of the pure-Python and compiled score kernels.

Runs the full dynamic program on a few representative workloads with both
backends, checks the outputs are bit-identical, and prints a table.

    python3 benchmarks/bench_cores.py [--repeats 3]
"""

import argparse
import time

import numpy as np

from bayesdt.dataset import Dataset, bucketize, generate_xor
from bayesdt.score import Hyperparams, compiled_available, compute_scores


def workloads():
    yield "xor n=512 d=8", generate_xor(512, 8, 4, seed=0)
    rng = np.random.default_rng(7)
    features = rng.integers(0, 4, size=(256, 4)).astype(np.float64)
    labels = rng.integers(0, 3, size=256).astype(np.int64)
    labels[0] = 0
    yield "random n=256 d=4 lv=4", Dataset(features, labels, 3)
    try:
        from sklearn.datasets import load_iris
    except ImportError:
        return
    iris = load_iris()
    data = Dataset(
        np.asarray(iris.data, dtype=np.float64),
        np.asarray(iris.target, dtype=np.int64),
        3,
    )
    yield "iris bins=10", bucketize(data, 10)


def time_backend(data, backend, repeats):
    hp = Hyperparams.for_classes(data.class_count)
    best = float("inf")
    memo = None
    for _ in range(repeats):
        started = time.perf_counter()
        memo = compute_scores(data, hp, backend=backend)
        best = min(best, time.perf_counter() - started)
    return best, memo


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3,
                        help="Timed runs per backend; the best is reported.")
    args = parser.parse_args()

    if not compiled_available():
        print("compiled backend not built; timing pure only")
    print(f"{'workload':<24} {'entries':>8} {'pure':>9} {'compiled':>9} {'speedup':>8}")
    for name, data in workloads():
        pure_t, pure_memo = time_backend(data, "pure", args.repeats)
        row = f"{name:<24} {len(pure_memo):>8} {pure_t:>8.3f}s"
        if compiled_available():
            comp_t, comp_memo = time_backend(data, "compiled", args.repeats)
            identical = pure_memo.masks == comp_memo.masks and all(
                np.array_equal(getattr(pure_memo, col), getattr(comp_memo, col),
                               equal_nan=True)
                for col in ("log_leaf", "log_mass", "log_best", "best_threshold")
            )
            row += f" {comp_t:>8.3f}s {pure_t / comp_t:>7.1f}x"
            if not identical:
                row += "  MISMATCH"
        print(row)


if __name__ == "__main__":
    main()
