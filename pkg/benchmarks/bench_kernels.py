#!/usr/bin/env python3
"""Throughput comparison of the numba and pure-NumPy kernel backends.

Two workload shapes per kernel: "desk" mirrors the built-in simulator scale
(hundreds of documents, called hundreds of thousands of times per study) and
"large" a production-sized corpus. Run:

    python3 benchmarks/bench_kernels.py [--repeat 200]

Force the study pipeline onto one backend with SEARCHTUNE_NUMBA=0|1.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from searchtune.kernels import available_backends, get_backend


def bm25_inputs(rng, n_docs, n_terms, density):
    starts = [0]
    docs, tfs = [], []
    for _ in range(n_terms):
        n_post = max(1, int(n_docs * density))
        docs.append(np.sort(rng.choice(n_docs, size=n_post, replace=False)).astype(np.int64))
        tfs.append(rng.integers(1, 6, size=n_post).astype(np.float64))
        starts.append(starts[-1] + n_post)
    return (
        n_docs,
        np.array(starts, dtype=np.int64),
        np.concatenate(docs),
        np.concatenate(tfs),
        rng.uniform(0.5, 3.0, size=n_terms),
        rng.uniform(0.8, 1.6, size=n_docs),
    )


def make_cases(rng):
    cases = []
    for label, n_docs in (("desk", 200), ("large", 200_000)):
        cases.append((f"bm25_accumulate[{label}]", "bm25_accumulate", bm25_inputs(rng, n_docs, 6, 0.3)))
    for label, n_docs in (("desk", 200), ("large", 100_000)):
        signals = np.ascontiguousarray(rng.normal(size=(n_docs, 5)))
        weights = rng.uniform(0, 1, size=5)
        cases.append((f"blend_scores[{label}]", "blend_scores", (signals, weights, True)))
    for label, n_docs in (("desk", 200), ("large", 100_000)):
        scores = rng.normal(size=n_docs)
        cases.append((f"topk_desc[{label}]", "topk_desc", (scores, 100)))
    for label, (n_docs, depth) in (("desk", (200, 100)), ("large", (100_000, 1000))):
        ranked = rng.permutation(n_docs)[:depth].astype(np.int64)
        gains = rng.uniform(0, 2, size=n_docs)
        pos = (rng.random(n_docs) < 0.3).astype(np.float64)
        ks = np.array([10, 20, depth], dtype=np.int64)
        cases.append((f"ranking_stats[{label}]", "ranking_stats", (ranked, gains, pos, ks)))
    for label, (n_x, n_centers) in (("desk", (24, 25)), ("large", (512, 400))):
        x = rng.uniform(0, 1, size=n_x)
        centers = rng.uniform(0, 1, size=n_centers)
        cases.append((f"tgm_logpdf[{label}]", "tgm_logpdf", (x, centers, 0.1, 0.0, 1.0)))
    return cases


def time_call(fn, args, repeat):
    fn(*args)  # warm (JIT compile on the numba side)
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200, help="calls per timing loop")
    args = parser.parse_args()

    backends = available_backends()
    if "numba" not in backends:
        print("numba is not importable; only the numpy backend will be timed")
    impls = {name: get_backend(name) for name in backends}
    rng = np.random.default_rng(0)
    cases = make_cases(rng)

    width = max(len(name) for name, _, _ in cases)
    header = f"{'kernel'.ljust(width)}  " + "  ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, attr, call_args in cases:
        times = {b: time_call(getattr(impls[b], attr), call_args, args.repeat) for b in backends}
        row = f"{name.ljust(width)}  " + "  ".join(f"{times[b] * 1e6:>10.1f}us" for b in backends)
        if len(backends) == 2:
            row += f"  {times['numpy'] / times['numba']:>7.2f}x"
        print(row)


if __name__ == "__main__":
    main()
