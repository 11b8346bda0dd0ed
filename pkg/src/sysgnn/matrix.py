"""Matrix containers, sparse formats, 2x2 block partitioning and reference oracles.

Dense matrices are plain 2-D ``numpy.float32`` arrays (inputs are expected to be
representable in half precision, accumulation happens in single precision).
Sparse operands are held as :class:`SparseTile`, a sorted coordinate list.

The oracles in this module are deliberately naive: they fix the summation order
(ascending inner index) so that simulated datapaths that accumulate in the same
order can be compared bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ACC_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand dimensions do not chain."""


def as_dense(x, name: str = "matrix") -> np.ndarray:
    """Validate ``x`` as a non-empty 2-D matrix and return a float32 copy."""
    arr = np.array(x, dtype=ACC_DTYPE, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class SparseTile:
    """Sparse matrix (tile) stored as coordinates sorted by ``(row, col)``.

    Every storage format accepted by the simulator (COO, CSR, CSC) is normalized
    to this representation; ``format_tag`` only remembers where it came from.
    Instances are immutable.
    """

    __slots__ = ("n_rows", "n_cols", "rows", "cols", "vals", "format_tag")

    def __init__(self, n_rows: int, n_cols: int, rows=(), cols=(), vals=(),
                 format_tag: str = "COO"):
        n_rows, n_cols = int(n_rows), int(n_cols)
        if n_rows < 1 or n_cols < 1:
            raise ShapeError(f"sparse tile must be at least 1x1, got {n_rows}x{n_cols}")
        r = np.asarray(rows, dtype=np.int64).reshape(-1)
        c = np.asarray(cols, dtype=np.int64).reshape(-1)
        v = np.asarray(vals, dtype=np.float64).reshape(-1)
        if not (len(r) == len(c) == len(v)):
            raise ValueError("rows, cols and vals must have equal length")
        if len(r):
            if r.min() < 0 or r.max() >= n_rows or c.min() < 0 or c.max() >= n_cols:
                raise IndexError(f"entry index out of range for {n_rows}x{n_cols} tile")
            key = r * n_cols + c
            if np.any(np.diff(key) <= 0):
                if np.any(np.diff(np.sort(key)) == 0):
                    raise ValueError("duplicate (row, col) coordinate in sparse tile")
                raise ValueError("entries must be sorted by (row, col)")
        object.__setattr__(self, "n_rows", n_rows)
        object.__setattr__(self, "n_cols", n_cols)
        object.__setattr__(self, "rows", frozen(r))
        object.__setattr__(self, "cols", frozen(c))
        object.__setattr__(self, "vals", frozen(v))
        object.__setattr__(self, "format_tag", format_tag)

    def __setattr__(self, name, value):
        raise AttributeError("SparseTile is immutable")

    # construction -------------------------------------------------------

    @classmethod
    def from_entries(cls, n_rows: int, n_cols: int,
                     entries: Iterable[tuple[int, int, float]],
                     format_tag: str = "COO") -> "SparseTile":
        """Build a tile from unsorted ``(row, col, val)`` triples."""
        ent = list(entries)
        if not ent:
            return cls(n_rows, n_cols, format_tag=format_tag)
        r, c, v = (np.array(x) for x in zip(*ent))
        order = np.lexsort((c, r))
        return cls(n_rows, n_cols, r[order], c[order], v[order], format_tag)

    @classmethod
    def from_dense(cls, m) -> "SparseTile":
        arr = np.asarray(m)
        r, c = np.nonzero(arr)
        return cls(arr.shape[0], arr.shape[1], r, c, arr[r, c])

    @classmethod
    def identity(cls, n: int, n_cols: int | None = None) -> "SparseTile":
        idx = np.arange(n)
        return cls(n, n if n_cols is None else n_cols, idx, idx, np.ones(n))

    # views --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.vals)]

    def occupancy(self) -> float:
        return self.nnz / (self.n_rows * self.n_cols)

    def indptr(self) -> np.ndarray:
        return np.searchsorted(self.rows, np.arange(self.n_rows + 1)).astype(np.int64)

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n_rows).astype(np.int64)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.searchsorted(self.rows, [i, i + 1])
        return self.cols[lo:hi], self.vals[lo:hi]

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.shape, dtype=dtype)
        out[self.rows, self.cols] = self.vals
        return out

    def transpose(self) -> "SparseTile":
        return SparseTile.from_entries(self.n_cols, self.n_rows,
                                       zip(self.cols, self.rows, self.vals), self.format_tag)

    def with_values(self, vals) -> "SparseTile":
        """Same pattern, new values."""
        return SparseTile(self.n_rows, self.n_cols, self.rows, self.cols, vals, self.format_tag)

    def submatrix(self, r0: int, r1: int, c0: int, c1: int) -> "SparseTile":
        """Entries inside ``[r0, r1) x [c0, c1)``, re-based to the origin."""
        sel = (self.rows >= r0) & (self.rows < r1) & (self.cols >= c0) & (self.cols < c1)
        return SparseTile(r1 - r0, c1 - c0, self.rows[sel] - r0, self.cols[sel] - c0,
                          self.vals[sel], self.format_tag)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseTile):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.vals, other.vals))

    def __hash__(self):
        return hash((self.shape, self.rows.tobytes(), self.cols.tobytes(), self.vals.tobytes()))

    def __repr__(self) -> str:
        return f"SparseTile({self.n_rows}x{self.n_cols}, nnz={self.nnz}, {self.format_tag})"


def to_coo(csr_rows: Sequence[int], cols: Sequence[int], vals: Sequence[float],
           n_cols: int | None = None) -> SparseTile:
    """Materialize a CSR triple (row pointers, column indices, values) as a tile.

    Columns inside a row may arrive unsorted; they are sorted here. A repeated
    column inside one row is rejected.
    """
    ptr = np.asarray(csr_rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    v = np.asarray(vals, dtype=np.float64)
    if len(ptr) < 2:
        raise ValueError("row pointer list needs at least two entries")
    if ptr[0] != 0 or np.any(np.diff(ptr) < 0):
        raise ValueError(f"row pointers must start at 0 and be non-decreasing: {ptr.tolist()}")
    if ptr[-1] != len(c) or len(c) != len(v):
        raise ValueError(f"final row pointer {ptr[-1]} != nnz {len(c)}")
    n_rows = len(ptr) - 1
    if n_cols is None:
        n_cols = int(c.max()) + 1 if len(c) else 1
    if len(c) and (c.min() < 0 or c.max() >= n_cols):
        raise IndexError(f"column index out of range [0, {n_cols})")
    r = np.repeat(np.arange(n_rows), np.diff(ptr))
    order = np.lexsort((c, r))
    r, c, v = r[order], c[order], v[order]
    if len(c) > 1 and np.any((np.diff(r) == 0) & (np.diff(c) == 0)):
        raise ValueError("duplicate coordinate inside a CSR row")
    return SparseTile(n_rows, n_cols, r, c, v, format_tag="CSR")


def csr_of(t: SparseTile) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return t.indptr(), t.cols.copy(), t.vals.copy()


def from_csc(col_ptr, rows, vals, n_rows: int | None = None) -> SparseTile:
    """CSC input is read as the CSR of the transpose and transposed back."""
    t = to_coo(col_ptr, rows, vals, n_cols=n_rows)
    out = t.transpose()
    return SparseTile(out.n_rows, out.n_cols, out.rows, out.cols, out.vals, "CSC")


# --------------------------------------------------------------------------
# oracles


def dense_matmul_oracle(a, b) -> np.ndarray:
    """Reference GEMM with single-precision accumulation in ascending-k order."""
    a = as_dense(a, "a")
    b = as_dense(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=ACC_DTYPE)
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return out


def spmm_oracle(s: SparseTile, d) -> np.ndarray:
    """Reference sparse x dense product, accumulating each row in ascending-k order."""
    d = as_dense(d, "d")
    if s.n_cols != d.shape[0]:
        raise ShapeError(f"cannot multiply sparse {s.n_rows}x{s.n_cols} by {d.shape[0]}x{d.shape[1]}")
    out = np.zeros((s.n_rows, d.shape[1]), dtype=ACC_DTYPE)
    vals = s.vals.astype(ACC_DTYPE)
    for r, k, v in zip(s.rows, s.cols, vals):
        out[r] += v * d[k]
    return out


def dense_as_sparse(m) -> SparseTile:
    return SparseTile.from_dense(np.asarray(m, dtype=np.float64))


# --------------------------------------------------------------------------
# 2x2 block partitioning


@dataclass(frozen=True)
class BlockPartition:
    """Four equally sized quadrants of a zero-padded parent matrix.

    ``blocks`` is ``(A0, A1, A2, A3)`` = top-left, top-right, bottom-left,
    bottom-right.
    """

    parent_shape: tuple[int, int]
    pad_rows: int
    pad_cols: int
    blocks: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]

    @property
    def block_rows(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def block_cols(self) -> int:
        return self.blocks[0].shape[1]

    def reassemble(self) -> np.ndarray:
        return assemble_2x2(self.blocks, self.parent_shape)


def partition_2x2(m) -> BlockPartition:
    m = as_dense(m)
    rows, cols = m.shape
    pr, pc = rows % 2, cols % 2
    padded = np.zeros((rows + pr, cols + pc), dtype=ACC_DTYPE)
    padded[:rows, :cols] = m
    h, w = padded.shape[0] // 2, padded.shape[1] // 2
    blocks = tuple(frozen(padded[i:i + h, j:j + w].copy())
                   for i, j in ((0, 0), (0, w), (h, 0), (h, w)))
    return BlockPartition((rows, cols), pr, pc, blocks)


def assemble_2x2(blocks: Sequence[np.ndarray], shape: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse of :func:`partition_2x2`; strips padding when ``shape`` is given."""
    top = np.hstack([blocks[0], blocks[1]])
    bottom = np.hstack([blocks[2], blocks[3]])
    full = np.vstack([top, bottom])
    if shape is not None:
        full = full[:shape[0], :shape[1]]
    return np.ascontiguousarray(full)
