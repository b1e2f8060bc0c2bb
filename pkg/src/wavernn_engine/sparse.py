"""Dense and block-sparse weight storage and matrix-vector products.

Sparse weights are kept in a block-CSR layout: retained blocks are grouped by
block-row in increasing block-column order, each block stored row-major in
half precision. Products widen every weight to float32 before multiplying and
accumulate in float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError


@dataclass(frozen=True)
class BlockShape:
    rows: int
    cols: int

    SUPPORTED = ((1, 1), (4, 4), (16, 1))

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InputError(f"block shape must be positive, got {self.rows}x{self.cols}")

    @property
    def m(self) -> int:
        return self.rows * self.cols

    @classmethod
    def parse(cls, text: str) -> "BlockShape":
        try:
            r, c = (int(p) for p in text.lower().split("x"))
        except ValueError:
            raise InputError(f"block shape must look like '16x1', got {text!r}") from None
        return cls(r, c)

    def grid(self, n_rows: int, n_cols: int) -> tuple[int, int]:
        """Number of block-rows and block-columns tiling an ``n_rows x n_cols`` matrix."""
        if n_rows % self.rows or n_cols % self.cols:
            raise InputError(
                f"matrix {n_rows}x{n_cols} is not divisible into {self} blocks")
        return n_rows // self.rows, n_cols // self.cols

    def __str__(self):
        return f"{self.rows}x{self.cols}"


UNSTRUCTURED = BlockShape(1, 1)


@dataclass(frozen=True, eq=False)
class SparsityMask:
    """One bit per block, block-row-major, packed little-endian into bytes."""

    block_shape: BlockShape
    n_rows: int
    n_cols: int
    bits: np.ndarray

    @classmethod
    def from_blocks(cls, keep, block_shape: BlockShape) -> "SparsityMask":
        keep = np.asarray(keep, dtype=bool)
        if keep.ndim != 2:
            raise InputError("block keep-map must be 2-D")
        bits = np.packbits(keep.reshape(-1), bitorder="little")
        bits.flags.writeable = False
        return cls(block_shape, keep.shape[0] * block_shape.rows,
                   keep.shape[1] * block_shape.cols, bits)

    @classmethod
    def full(cls, n_rows, n_cols, block_shape=UNSTRUCTURED, value=True):
        nbr, nbc = block_shape.grid(n_rows, n_cols)
        return cls.from_blocks(np.full((nbr, nbc), value, dtype=bool), block_shape)

    @classmethod
    def from_elements(cls, keep, block_shape=UNSTRUCTURED) -> "SparsityMask":
        """Build from an element-level mask; a block is kept if any element is."""
        keep = np.asarray(keep, dtype=bool)
        nbr, nbc = block_shape.grid(*keep.shape)
        blocks = keep.reshape(nbr, block_shape.rows, nbc, block_shape.cols).any(axis=(1, 3))
        return cls.from_blocks(blocks, block_shape)

    @property
    def grid(self) -> tuple[int, int]:
        return self.block_shape.grid(self.n_rows, self.n_cols)

    @property
    def n_bits(self) -> int:
        nbr, nbc = self.grid
        return nbr * nbc

    def blocks(self) -> np.ndarray:
        nbr, nbc = self.grid
        flat = np.unpackbits(self.bits, count=nbr * nbc, bitorder="little")
        return flat.reshape(nbr, nbc).astype(bool)

    def elements(self) -> np.ndarray:
        b = self.blocks()
        return np.repeat(np.repeat(b, self.block_shape.rows, axis=0), self.block_shape.cols, axis=1)

    def density(self) -> float:
        return float(self.blocks().mean()) if self.n_bits else 0.0

    def __eq__(self, other):
        return (isinstance(other, SparsityMask) and self.block_shape == other.block_shape
                and self.n_rows == other.n_rows and self.n_cols == other.n_cols
                and np.array_equal(self.blocks(), other.blocks()))


@dataclass(frozen=True, eq=False)
class BlockSparseMatrix:
    n_rows: int
    n_cols: int
    block_shape: BlockShape
    block_ptr: np.ndarray    # int32, one entry per block-row plus one
    block_cols: np.ndarray   # int32 block-column index of each retained block
    values: np.ndarray       # float16, retained blocks back to back

    def __post_init__(self):
        for arr in (self.block_ptr, self.block_cols, self.values):
            arr.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def n_blocks(self) -> int:
        return len(self.block_cols)

    @property
    def nnz(self) -> int:
        """Stored weights (retained blocks times block size)."""
        return len(self.values)

    @property
    def weight_bytes(self) -> int:
        return 2 * self.nnz

    def mask(self) -> SparsityMask:
        nbr, nbc = self.block_shape.grid(self.n_rows, self.n_cols)
        keep = np.zeros((nbr, nbc), dtype=bool)
        rows = np.repeat(np.arange(nbr), np.diff(self.block_ptr))
        keep[rows, self.block_cols] = True
        return SparsityMask.from_blocks(keep, self.block_shape)

    @classmethod
    def from_mask_and_values(cls, mask: SparsityMask, values) -> "BlockSparseMatrix":
        """Rebuild from a mask and the retained-block values in block-row-major order."""
        keep = mask.blocks()
        values = np.asarray(values, dtype=np.float16)
        if len(values) != int(keep.sum()) * mask.block_shape.m:
            raise InputError(
                f"expected {int(keep.sum()) * mask.block_shape.m} values, got {len(values)}")
        ptr = np.concatenate([[0], np.cumsum(keep.sum(axis=1))]).astype(np.int32)
        cols = np.nonzero(keep)[1].astype(np.int32)
        return cls(mask.n_rows, mask.n_cols, mask.block_shape, ptr, cols, values.copy())


def as_dense(d, dtype=np.float32) -> np.ndarray:
    """Validate a 2-D finite weight matrix and return a C-contiguous copy in ``dtype``."""
    a = np.asarray(d)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix contains non-finite entries")
    return np.ascontiguousarray(a, dtype=dtype)


def _vector(x, n, what="x"):
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 1 or len(x) != n:
        raise InputError(f"{what} must have length {n}, got shape {x.shape}")
    return x


def _lanes(X, n):
    X = np.ascontiguousarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != n:
        raise InputError(f"lane batch must have shape (k, {n}), got {X.shape}")
    return X


def matvec_dense(m, x) -> np.ndarray:
    W = np.ascontiguousarray(m, dtype=np.float32)
    if W.ndim != 2:
        raise InputError("matvec_dense needs a 2-D matrix")
    x = _vector(x, W.shape[1])
    y = np.empty((1, W.shape[0]), dtype=np.float32)
    kernels.backend.dense_matvec_lanes(W, x[None, :], y)
    return y[0]


def compress(d, mask: SparsityMask) -> BlockSparseMatrix:
    """Keep the blocks whose mask bit is set, rounding values to float16."""
    D = as_dense(d)
    if (mask.n_rows, mask.n_cols) != D.shape:
        raise InputError(f"mask is {mask.n_rows}x{mask.n_cols}, matrix is {D.shape[0]}x{D.shape[1]}")
    bs = mask.block_shape
    nbr, nbc = bs.grid(*D.shape)
    keep = mask.blocks()
    tiles = D.reshape(nbr, bs.rows, nbc, bs.cols).transpose(0, 2, 1, 3)
    values = tiles[keep].reshape(-1).astype(np.float16)
    ptr = np.concatenate([[0], np.cumsum(keep.sum(axis=1))]).astype(np.int32)
    cols = np.nonzero(keep)[1].astype(np.int32)
    return BlockSparseMatrix(D.shape[0], D.shape[1], bs, ptr, cols, values)


def decompress(s: BlockSparseMatrix) -> np.ndarray:
    bs = s.block_shape
    nbr, nbc = bs.grid(s.n_rows, s.n_cols)
    tiles = np.zeros((nbr, nbc, bs.rows, bs.cols), dtype=np.float32)
    rows = np.repeat(np.arange(nbr), np.diff(s.block_ptr))
    tiles[rows, s.block_cols] = s.values.astype(np.float32).reshape(-1, bs.rows, bs.cols)
    return tiles.transpose(0, 2, 1, 3).reshape(s.n_rows, s.n_cols)


def _bsr_lanes(s: BlockSparseMatrix, X, Y):
    kernels.backend.bsr_matvec_lanes(
        s.block_ptr, s.block_cols, s.values.view(np.uint16),
        s.block_shape.rows, s.block_shape.cols, X, Y)


def matvec_block_sparse(s: BlockSparseMatrix, x) -> np.ndarray:
    x = _vector(x, s.n_cols)
    y = np.empty((1, s.n_rows), dtype=np.float32)
    _bsr_lanes(s, x[None, :], y)
    return y[0]


def matvec_lanes(W, X) -> np.ndarray:
    """Row-wise product ``Y[k] = W @ X[k]`` for a dense or block-sparse ``W``.

    Every lane goes through the same kernel code, so lane ``k``'s result is
    bit-identical whether it is computed alone or alongside other lanes.
    """
    if isinstance(W, BlockSparseMatrix):
        X = _lanes(X, W.n_cols)
        Y = np.empty((X.shape[0], W.n_rows), dtype=np.float32)
        _bsr_lanes(W, X, Y)
        return Y
    W = np.ascontiguousarray(W, dtype=np.float32)
    X = _lanes(X, W.shape[1])
    Y = np.empty((X.shape[0], W.shape[0]), dtype=np.float32)
    kernels.backend.dense_matvec_lanes(W, X, Y)
    return Y


def matvec(W, x) -> np.ndarray:
    if isinstance(W, BlockSparseMatrix):
        return matvec_block_sparse(W, x)
    return matvec_dense(W, x)


def mask_overhead_bits(mask: SparsityMask) -> int:
    return mask.n_bits


def shape_of(W) -> tuple[int, int]:
    return W.shape if isinstance(W, BlockSparseMatrix) else tuple(np.shape(W))


def to_dense(W) -> np.ndarray:
    return decompress(W) if isinstance(W, BlockSparseMatrix) else np.asarray(W)
