"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel on representative workloads and prints a timing table
with speedups. Numba kernels are warmed up first so JIT compilation does
not pollute the numbers. Works (numpy column only) when numba is missing.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from semreopt import _kernels


def timeit(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def energy_case(rng, n_boxes=100, n_labels=80):
    p = rng.uniform(size=(n_boxes, n_labels))
    x = rng.uniform(size=(n_boxes, n_labels))
    half = rng.uniform(size=(n_labels, n_labels))
    s = (half + half.T) / 2
    active = rng.uniform(size=(n_boxes, n_labels)) < 0.3
    pair = ~np.eye(n_boxes, dtype=bool)
    return (x, p, s, 0.75, active, pair)


def jacobi_case(rng, n_boxes=100, n_labels=8):
    p = rng.uniform(size=(n_boxes, n_labels))
    half = rng.uniform(size=(n_labels, n_labels))
    s = (half + half.T) / 2
    active = np.ones((n_boxes, n_labels), dtype=bool)
    pair = ~np.eye(n_boxes, dtype=bool)
    return (p, s, 0.75, active, pair, 1e-8, 10_000)


def rwr_case(rng, n_nodes=2000, degree=8):
    rows, cols, vals = [], [], []
    for i in range(n_nodes):
        for j in rng.integers(0, n_nodes, size=degree):
            if i != j:
                rows.append(i)
                cols.append(int(j))
                vals.append(float(rng.uniform(0.1, 2.0)))
    adj = sp.coo_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))
    adj = (adj + adj.T).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    dangling = deg == 0.0
    inv_deg = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, deg))
    return (
        adj.indptr.astype(np.int64),
        adj.indices.astype(np.int64),
        adj.data.astype(np.float64),
        inv_deg,
        dangling,
        0,
        0.15,
        1e-10,
        100_000,
    )


def iou_case(rng, n=500, m=500):
    def boxes(k):
        return np.column_stack(
            [rng.uniform(0, 500, k), rng.uniform(0, 500, k), rng.uniform(5, 80, k), rng.uniform(5, 80, k)]
        )

    return (boxes(n), boxes(m))


CASES = (
    ("energy B=100 L=80", energy_case, "energy_value"),
    ("jacobi solve B=100 L=8", jacobi_case, "jacobi_solve"),
    ("rwr n=2000", rwr_case, "rwr_power_iteration"),
    ("iou 500x500", iou_case, "iou_matrix"),
)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    print(f"numba available: {_kernels.NUMBA_AVAILABLE}")
    print(f"{'kernel':<26}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    print("-" * 60)
    for name, case, base in CASES:
        case_args = case(rng)
        numpy_fn = getattr(_kernels, base + "_numpy")
        t_numpy = timeit(numpy_fn, case_args, args.repeats)
        if _kernels.NUMBA_AVAILABLE:
            numba_fn = getattr(_kernels, base + "_loops")
            numba_fn(*case_args)  # JIT warm-up
            t_numba = timeit(numba_fn, case_args, args.repeats)
            print(f"{name:<26}{t_numpy * 1e3:>10.2f}ms{t_numba * 1e3:>10.2f}ms{t_numpy / t_numba:>9.2f}x")
        else:
            print(f"{name:<26}{t_numpy * 1e3:>10.2f}ms{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
