"""Timing of single matrix-vector products and of a whole per-sample op inventory."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from . import kernels
from .cell import CellConfig, op_inventory
from .errors import InputError
from .sparse import BlockShape, BlockSparseMatrix, SparsityMask, compress


class KernelRow(NamedTuple):
    rows: int
    cols: int
    sparsity: float
    block: str                # "dense" or e.g. "16x1"
    median_ns: float
    min_ns: float
    weight_bytes: int
    gb_per_sec: float         # weight bytes streamed per second at the median
    gflops: float             # 2 * stored weights per product
    checksum: float


def random_block_sparse(n_rows, n_cols, sparsity, block_shape: BlockShape, seed=0):
    """Random matrix with exactly ``floor(sparsity * n_blocks)`` blocks removed."""
    rng = np.random.default_rng(seed)
    nbr, nbc = block_shape.grid(n_rows, n_cols)
    nb = nbr * nbc
    keep = np.ones(nb, dtype=bool)
    keep[rng.choice(nb, int(np.floor(sparsity * nb)), replace=False)] = False
    D = rng.standard_normal((n_rows, n_cols)).astype(np.float32)
    return compress(D, SparsityMask.from_blocks(keep.reshape(nbr, nbc), block_shape))


def _pin(cpu):
    cpus = sorted(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else []
    if cpus:
        os.sched_setaffinity(0, {cpus[cpu % len(cpus)]})


def _product(W, threads, pool):
    """Closure computing ``W @ x`` into a preallocated output, optionally split by rows."""
    be = kernels.backend
    if isinstance(W, BlockSparseMatrix):
        nrb = len(W.block_ptr) - 1
        args = (W.block_ptr, W.block_cols, W.values.view(np.uint16),
                W.block_shape.rows, W.block_shape.cols)

        def part(X, Y, a, b):
            be.bsr_matvec_lanes(*args, X, Y, a, b)
        n_units = nrb
    else:
        def part(X, Y, a, b):
            be.dense_matvec_lanes(W, X, Y, a, b)
        n_units = W.shape[0]
    if threads == 1:
        return lambda X, Y: part(X, Y, 0, n_units)
    cuts = np.linspace(0, n_units, threads + 1).astype(int)

    def run(X, Y):
        futs = [pool.submit(part, X, Y, int(cuts[k]), int(cuts[k + 1])) for k in range(threads)]
        for fu in futs:
            fu.result()
    return run


def time_product(W, reps=200, warmup=20, threads=1, seed=0):
    """(median ns, min ns, checksum) of ``reps`` products with a fixed random vector."""
    if threads not in (1, 2):
        raise InputError("threads must be 1 or 2")
    n_rows, n_cols = (W.n_rows, W.n_cols) if isinstance(W, BlockSparseMatrix) else W.shape
    X = np.random.default_rng(seed + 1).standard_normal((1, n_cols)).astype(np.float32)
    Y = np.empty((1, n_rows), dtype=np.float32)
    pool = None
    if threads > 1:
        pool = ThreadPoolExecutor(threads, initializer=_pin_next, initargs=(iter(range(threads)),))
    try:
        f = _product(W, threads, pool)
        for _ in range(warmup):
            f(X, Y)
        ts = np.empty(reps, dtype=np.int64)
        for k in range(reps):
            t0 = time.perf_counter_ns()
            f(X, Y)
            ts[k] = time.perf_counter_ns() - t0
    finally:
        if pool is not None:
            pool.shutdown()
    return float(np.median(ts)), float(ts.min()), float(Y.astype(np.float64).sum())


def _pin_next(counter):
    _pin(next(counter))


def benchmark_matvec(n_rows, n_cols, sparsity=0.0, block_shape: BlockShape | None = None,
                     reps=200, threads=1, seed=0) -> KernelRow:
    """Dense float32 when ``block_shape`` is None, otherwise block-sparse float16."""
    if block_shape is None:
        W = np.random.default_rng(seed).standard_normal((n_rows, n_cols)).astype(np.float32)
        stored, nbytes, label, sp = W.size, 4 * W.size, "dense", 0.0
    else:
        W = random_block_sparse(n_rows, n_cols, sparsity, block_shape, seed)
        stored, nbytes, label, sp = W.nnz, W.weight_bytes, str(block_shape), sparsity
    med, mn, chk = time_product(W, reps, threads=threads, seed=seed)
    return KernelRow(n_rows, n_cols, sp, label, med, mn, nbytes, nbytes / med,
                     2 * stored / med, chk)


class InventoryRow(NamedTuple):
    hidden: int
    sparsity: float
    block: str
    op_median_ns: tuple[float, ...]
    samples_per_sec: float


def benchmark_inventory(hidden, sparsity=0.0, block_shape: BlockShape | None = None,
                        reps=100, threads=1, seed=0) -> InventoryRow:
    """Time every product of one sample separately and add up the medians.

    Ops: three gate products, two projections, two logit products (unstacked)
    and the gate nonlinearities over ``3h`` values.
    """
    shapes = op_inventory(CellConfig(hidden), stacked=False)
    medians = []
    for k, (r, c) in enumerate(shapes):
        if block_shape is None:
            W = np.random.default_rng(seed + k).standard_normal((r, c)).astype(np.float32)
        else:
            W = random_block_sparse(r, c, sparsity, block_shape, seed + k)
        medians.append(time_product(W, reps, threads=threads, seed=seed + k)[0])
    pre = np.random.default_rng(seed).standard_normal(3 * hidden).astype(np.float32)
    out = np.empty_like(pre)
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        kernels.backend.gate_nonlinearities(pre, out)
        ts.append(time.perf_counter_ns() - t0)
    medians.append(float(np.median(ts)))
    label = "dense" if block_shape is None else str(block_shape)
    return InventoryRow(hidden, sparsity if block_shape else 0.0, label, tuple(medians),
                        1e9 / sum(medians))


def format_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
