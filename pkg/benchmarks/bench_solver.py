#!/usr/bin/env python3
"""Benchmark the position-solver kernel: numba backend vs numpy fallback.

The workload mirrors the Monte-Carlo harness: repeated multistart solves of
60-sample single-anchor problems. Run as `python3 benchmarks/bench_solver.py`.
"""

import math
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pseudolat import _kernels  # noqa: E402


def build_problems(n_problems=200, k=60, seed=0):
    rng = np.random.default_rng(seed)
    problems = []
    for _ in range(n_problems):
        theta = np.linspace(0, 2 * math.pi, k, endpoint=False) + rng.uniform(0, 2 * math.pi)
        anchors = np.column_stack([50 * np.cos(theta), 50 * np.sin(theta), np.full(k, 100.0)])
        target = np.array([rng.uniform(-100, 100), rng.uniform(-100, 100), 0.0])
        d = np.linalg.norm(anchors - target, axis=1) + rng.normal(0, 2.0, k)
        problems.append((anchors, np.maximum(d, 0.0)))
    return problems


def run(backend, problems, starts, lo, hi):
    os.environ["PSEUDOLAT_BACKEND"] = backend
    _kernels.warmup()  # compile outside the timed region
    best = math.inf
    for _ in range(3):
        t0 = time.perf_counter()
        acc = 0.0
        for anchors, d in problems:
            _, f, _, _, _ = _kernels.lm_solve_batch(
                anchors, d, starts, lo, hi, 200, 1e-9, 1e-12, 1e-3
            )
            acc += float(f.min())
        best = min(best, time.perf_counter() - t0)
    return best, acc


def main():
    problems = build_problems()
    lo = np.array([-150.0, -150.0, 0.0])
    hi = np.array([150.0, 150.0, 10.0])
    xs = np.linspace(-150, 150, 5)
    starts = np.array([[x, y, 0.0] for x in xs for y in xs])

    rows = []
    for backend in ("numpy", "numba"):
        try:
            elapsed, checksum = run(backend, problems, starts, lo, hi)
        except RuntimeError as e:
            print(f"{backend}: unavailable ({e})")
            continue
        rows.append((backend, elapsed, checksum))

    n_solves = len(problems)
    print(f"\n{n_solves} multistart solves ({starts.shape[0]} starts, 60 measurements each)")
    print(f"{'backend':<8} {'best of 3':>12} {'per solve':>12}")
    for backend, elapsed, checksum in rows:
        print(f"{backend:<8} {elapsed:>10.3f} s {elapsed / n_solves * 1e3:>9.2f} ms   (checksum {checksum:.6g})")
    if len(rows) == 2:
        print(f"speedup: {rows[0][1] / rows[1][1]:.1f}x (numba over numpy)")


if __name__ == "__main__":
    main()
