"""Minimal sparse/dense linear algebra shared by every other module.

Dense vectors are plain 1-D float64 ``numpy`` arrays. Sparse matrices are
immutable CSR triples with strictly increasing column indices per row; rows
may be empty. Duplicate column indices are rejected at construction (parsers
must pre-aggregate).
"""

from typing import NamedTuple

import numpy as np

from . import _backend


class SparseRow(NamedTuple):
    """One row of a CSR matrix: sorted column indices and their values."""

    cols: np.ndarray
    vals: np.ndarray


def as_dense_vector(v, length=None, name="vector"):
    """Coerce to a 1-D float64 array and check finiteness (and length)."""
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


class SparseMatrix:
    """Immutable CSR matrix with float64 values and int64 indices."""

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values", "_row_ids")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, validate=True):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self._row_ids = None
        if validate:
            self._validate()
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.setflags(write=False)

    def _validate(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("matrix dimensions must be nonnegative")
        off = self.row_offsets
        if off.ndim != 1 or off.shape[0] != self.n_rows + 1:
            raise ValueError("row_offsets must have length n_rows + 1")
        if off[0] != 0:
            raise ValueError("row_offsets[0] must be 0")
        if np.any(np.diff(off) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        nnz = int(off[-1])
        if self.col_indices.shape[0] != nnz or self.values.shape[0] != nnz:
            raise ValueError("row_offsets[-1] must equal len(col_indices) == len(values)")
        if nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing within each row (catches duplicates too)
            inner = np.diff(self.col_indices)
            bounds = off[1:-1]
            bounds = bounds[(bounds > 0) & (bounds < nnz)]
            inner[bounds - 1] = 1  # ignore transitions across row boundaries
            if np.any(inner <= 0):
                raise ValueError("column indices must be strictly increasing within each row")
            if not np.all(np.isfinite(self.values)):
                raise ValueError("values must be finite")

    @classmethod
    def from_rows(cls, rows, n_cols):
        """Build from an iterable of (col_indices, values) pairs."""
        offsets = [0]
        cols = []
        vals = []
        for c, v in rows:
            c = np.asarray(c, dtype=np.int64)
            v = np.asarray(v, dtype=np.float64)
            cols.append(c)
            vals.append(v)
            offsets.append(offsets[-1] + len(c))
        cat_c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        cat_v = np.concatenate(vals) if vals else np.zeros(0)
        return cls(len(offsets) - 1, n_cols, np.asarray(offsets, dtype=np.int64), cat_c, cat_v)

    @classmethod
    def from_dense(cls, arr, keep_zeros=False):
        arr = np.asarray(arr, dtype=np.float64)
        rows = []
        for r in arr:
            mask = np.ones(len(r), dtype=bool) if keep_zeros else (r != 0.0)
            rows.append((np.nonzero(mask)[0], r[mask]))
        return cls.from_rows(rows, arr.shape[1])

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def row_nnz(self):
        return np.diff(self.row_offsets)

    def row(self, i):
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return SparseRow(self.col_indices[lo:hi], self.values[lo:hi])

    def iter_rows(self):
        for i in range(self.n_rows):
            yield self.row(i)

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        row_ids = np.repeat(np.arange(self.n_rows), self.row_nnz())
        out[row_ids, self.col_indices] = self.values
        return out

    def take_rows(self, row_ids):
        """New SparseMatrix holding the given rows, in order."""
        row_ids = np.ascontiguousarray(row_ids, dtype=np.int64)
        if row_ids.size and (row_ids.min() < 0 or row_ids.max() >= self.n_rows):
            raise ValueError("row index out of range")
        off, cols, vals = _backend.csr_take_rows(
            self.row_offsets, self.col_indices, self.values, row_ids
        )
        return SparseMatrix(len(row_ids), self.n_cols, off, cols, vals, validate=False)

    def row_ids(self):
        """Row id of every stored entry (cached; used by fallback kernels)."""
        if self._row_ids is None:
            ids = np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_nnz())
            ids.setflags(write=False)
            self._row_ids = ids
        return self._row_ids

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def spmv(M, v):
    """Sparse matrix times dense vector: returns M @ v (length n_rows)."""
    v = as_dense_vector(v, length=M.n_cols, name="v")
    return _backend.csr_matvec(M.row_offsets, M.col_indices, M.values, v)


def spmv_t_weighted(M, q, v):
    """Weighted transpose product M.T @ diag(q) @ v (length n_cols).

    q must be elementwise nonnegative.
    """
    q = as_dense_vector(q, length=M.n_rows, name="q")
    v = as_dense_vector(v, length=M.n_rows, name="v")
    if q.size and q.min() < 0:
        raise ValueError("weights must be nonnegative")
    return _backend.csr_rmatvec(M.row_offsets, M.col_indices, M.values, q * v, M.n_cols)


def weighted_median(values, weights):
    """Lower weighted median.

    Returns the smallest value ``t`` such that the total weight of entries
    with value <= t reaches half the total weight. Zero-weight entries are
    ignored; negative weights, empty input, or zero total weight are errors.
    """
    values = as_dense_vector(values, name="values")
    weights = as_dense_vector(weights, name="weights")
    if values.shape[0] != weights.shape[0]:
        raise ValueError("values and weights must have the same length")
    if values.shape[0] == 0:
        raise ValueError("weighted_median of empty input")
    if weights.min() < 0:
        raise ValueError("weights must be nonnegative")
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    total = float(weights.sum())
    if total <= 0:
        raise ValueError("total weight must be positive")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, total / 2.0))
    return float(values[order[idx]])
