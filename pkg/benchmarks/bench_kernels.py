#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the pure-numpy fallback.

Times the hot kernels (CSR products, row gathers, tree descent) and one
end-to-end tree construction on synthetic data. Run from the repo root:

    python benchmarks/bench_kernels.py

The two backends are imported side by side, so this works regardless of
which one the package selected at import time (the compiled section is
skipped when the extension is unavailable).
"""

import time

import numpy as np

from spectree import SolverParams, SynthConfig, TreeConfig, make_synthetic
from spectree import _kernels_py

try:
    from spectree import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def timeit(fn, repeats=7):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    n, d = 50_000, 64
    density = 0.5
    rows = []
    for _ in range(n):
        cols = np.nonzero(rng.random(d) < density)[0].astype(np.int64)
        rows.append((cols, rng.standard_normal(len(cols))))
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(c) for c, _ in rows])
    cols = np.concatenate([c for c, _ in rows])
    vals = np.concatenate([v for _, v in rows])
    v = rng.standard_normal(d)
    u = rng.standard_normal(n)
    ids = rng.integers(0, n, size=n // 2).astype(np.int64)
    dense = np.ascontiguousarray(rng.standard_normal((d, 8)))

    cases = [
        ("csr_matvec", lambda k: k.csr_matvec(offsets, cols, vals, v)),
        ("csr_rmatvec", lambda k: k.csr_rmatvec(offsets, cols, vals, u, d)),
        ("csr_matmul_dense", lambda k: k.csr_matmul_dense(offsets, cols, vals, dense)),
        ("csr_take_rows", lambda k: k.csr_take_rows(offsets, cols, vals, ids)),
        ("csr_matmul_dense_rows",
         lambda k: k.csr_matmul_dense_rows(offsets, cols, vals, ids, dense)),
    ]

    # a perfect depth-8 routing tree for the descent benchmark
    n_nodes = 2**9 - 1
    kind = np.zeros(n_nodes, dtype=np.uint8)
    kind[2**8 - 1:] = 1
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    for i in range(2**8 - 1):
        left[i], right[i] = 2 * i + 1, 2 * i + 2
    bias = rng.standard_normal(n_nodes) * 0.1
    routers = rng.standard_normal((n_nodes, d))
    cases.append((
        "route_batch (depth 8)",
        lambda k: k.route_batch(offsets, cols, vals, kind, left, right, bias,
                                routers, 0),
    ))

    print(f"kernel benchmarks: n={n}, d={d}, nnz={len(vals)}")
    header = f"{'kernel':<24}{'pure (ms)':>12}{'compiled (ms)':>15}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_py = timeit(lambda: call(_kernels_py)) * 1e3
        if _kernels_cy is not None:
            t_cy = timeit(lambda: call(_kernels_cy)) * 1e3
            print(f"{name:<24}{t_py:>12.2f}{t_cy:>15.2f}{t_py / t_cy:>9.1f}x")
        else:
            print(f"{name:<24}{t_py:>12.2f}{'n/a':>15}{'':>10}")


def bench_tree_build():
    import os
    import subprocess
    import sys

    print("\nend-to-end tree construction (c=64, d=32, n=5760, depth 6):", flush=True)
    code = (
        "import time\n"
        "from spectree import SolverParams, SynthConfig, TreeConfig, "
        "backend_name, build_tree, make_synthetic\n"
        "cfg = SynthConfig(64, 32, 100, 24.0, 1.0, seed=7)\n"
        "tr, _ = make_synthetic(cfg)\n"
        "tc = TreeConfig(max_depth=6, leaf_budget=8, recall_target=0.999, "
        "solver=SolverParams(seed=1))\n"
        "t0 = time.perf_counter()\n"
        "build_tree(tr, tc)\n"
        "print(f'  {backend_name():<10} {time.perf_counter() - t0:.2f}s')\n"
    )
    for env_val in ("0", "1"):
        env = dict(os.environ, SPECTREE_PURE=env_val)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


if __name__ == "__main__":
    bench_kernels()
    bench_tree_build()
