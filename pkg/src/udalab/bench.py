"""Benchmark the compiled kernels against the numpy fallback.

Times each hot kernel and a composite forward/backward training step at the
desk-scale shapes the training loop actually uses.
"""

from __future__ import annotations

import time

import numpy as np

from .backend import available_backends


def _workloads(batch: int):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, 16))
    w = rng.normal(size=(16, 16))
    w2 = rng.normal(size=(2, 16))
    b = rng.normal(size=16)
    g = rng.normal(size=(batch, 16))
    logits = rng.normal(size=(batch, 2))
    target = np.zeros((batch, 2))
    target[:, 0] = 1.0
    return x, w, w2, b, g, logits, target


def _time(fn, repeat: int) -> float:
    fn()  # warm up (JIT-free, but touches caches and allocators)
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def run_bench(repeat: int = 2000, batch: int = 64) -> list[dict]:
    """Per-backend microsecond timings; returns one record per (kernel, backend)."""
    backends = available_backends()
    x, w, w2, b, g, logits, target = _workloads(batch)
    records = []
    for mod in backends:
        cases = {
            "dense_fwd": lambda: mod.dense_fwd(x, w, b),
            "matmul_nn": lambda: mod.matmul_nn(x, w),
            "matmul_tn": lambda: mod.matmul_tn(g, x),
            "relu_fwd": lambda: mod.relu_fwd(x),
            "softmax_xent": lambda: mod.xent_fwd(logits, target),
            "train_step": lambda: _composite_step(mod, x, w, w2, b, target),
        }
        for kernel, fn in cases.items():
            records.append({
                "backend": mod.NAME,
                "kernel": kernel,
                "us_per_call": _time(fn, repeat) * 1e6,
            })
    return records


def _composite_step(mod, x, w, w2, b, target):
    # three-layer forward, loss, and the matching backward chain
    h1 = mod.relu_fwd(mod.dense_fwd(x, w, b))
    h2 = mod.relu_fwd(mod.dense_fwd(h1, w, b))
    logits = mod.dense_fwd(h2, w2, b[:2])
    loss, p = mod.xent_fwd(logits, target)
    dz = mod.xent_bwd(p, target, 1.0)
    dw3 = mod.matmul_tn(dz, h2)
    dh2 = mod.relu_bwd(mod.matmul_nn(dz, w2), h2)
    dw2 = mod.matmul_tn(dh2, h1)
    db2 = mod.col_sum(dh2)
    dh1 = mod.relu_bwd(mod.matmul_nn(dh2, w), h1)
    dw1 = mod.matmul_tn(dh1, x)
    db1 = mod.col_sum(dh1)
    return loss, dw1, db1, dw2, db2, dw3


def format_bench(records: list[dict]) -> str:
    kernels = []
    for rec in records:
        if rec["kernel"] not in kernels:
            kernels.append(rec["kernel"])
    by_key = {(r["backend"], r["kernel"]): r["us_per_call"] for r in records}
    backends = []
    for rec in records:
        if rec["backend"] not in backends:
            backends.append(rec["backend"])
    lines = []
    header = f"{'kernel':<14}" + "".join(f"{be + ' (us)':>16}" for be in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    lines.append(header)
    for kernel in kernels:
        row = f"{kernel:<14}"
        for be in backends:
            row += f"{by_key[(be, kernel)]:>16.2f}"
        if len(backends) == 2:
            ratio = by_key[(backends[1], kernel)] / by_key[(backends[0], kernel)]
            row += f"{ratio:>9.2f}x"
        lines.append(row)
    if len(backends) == 1:
        lines.append("(compiled kernels not built; showing the numpy fallback only)")
    return "\n".join(lines)
