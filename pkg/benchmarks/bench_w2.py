#!/usr/bin/env python3
"""Benchmark the pairwise squared-W2 kernel backends (compiled vs numpy).

Times the forward distance matrix and the fused backward pass on the
three shapes that dominate a training/evaluation run, then times one
full optimizer step of the small planted-corpus model under each
backend. Run from the repository root:

    python3 benchmarks/bench_w2.py
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from mstein import kernels

SHAPES = [
    # (label, batch, queries, keys, dim)
    ("attention 64x2 heads, T=50", 128, 50, 50, 32),
    ("contrastive 2N=512 views", 1, 512, 512, 64),
    ("ranking 256 users x 12k items", 1, 256, 12000, 64),
]


def time_call(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernel():
    rng = np.random.default_rng(0)
    rows = []
    for label, n, q, k, d in SHAPES:
        mu_a = rng.normal(size=(n, q, d))
        sd_a = rng.uniform(0.5, 2.0, size=(n, q, d))
        mu_b = rng.normal(size=(n, k, d))
        sd_b = rng.uniform(0.5, 2.0, size=(n, k, d))
        grad = rng.normal(size=(n, q, k))
        timings = {}
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            fwd = time_call(lambda: kernels.w2sq_cross(mu_a, sd_a, mu_b, sd_b))
            bwd = time_call(lambda: kernels.w2sq_cross_backward(grad, mu_a, sd_a, mu_b, sd_b))
            timings[backend] = (fwd, bwd)
        rows.append((label, timings))
    print(f"{'workload':38s} {'backend':8s} {'forward':>10s} {'backward':>10s} {'fwd speedup':>12s}")
    for label, timings in rows:
        base_fwd = timings["numpy"][0]
        for backend, (fwd, bwd) in sorted(timings.items()):
            speedup = f"{base_fwd / fwd:10.2f}x" if backend != "numpy" else f"{'1.00':>10s}x"
            print(f"{label:38s} {backend:8s} {fwd * 1e3:9.2f}ms {bwd * 1e3:9.2f}ms {speedup}")


def bench_train_step():
    from synth_corpus import planted_corpus

    from mstein.config import TrainConfig
    from mstein.train import TrainState, prepare_training_data, train_step

    corpus = planted_corpus(n_items=50, n_users=256, length=20, seed=0)
    cfg = TrainConfig(dim=32, layers=2, heads=2, max_len=19, dropout=0.1,
                      batch_size=128, max_epochs=1, patience=1, seed=1)
    data = prepare_training_data(corpus, cfg)
    users = np.asarray(data.user_indices)[: cfg.batch_size]
    print(f"\n{'one optimizer step (B=128, L=2, d=32)':38s}")
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        state = TrainState.fresh(cfg, corpus.item_count)
        train_step(state, data, users, 1, 0)  # warm up
        t = time_call(lambda: train_step(state, data, users, 1, 1), repeats=3)
        print(f"{'':38s} {backend:8s} {t * 1e3:9.1f}ms")


if __name__ == "__main__":
    bench_kernel()
    bench_train_step()
