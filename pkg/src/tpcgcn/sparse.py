"""Sparse matrices: coordinate-list construction, compressed-row multiply.

Instances are immutable after construction. Entries are validated (bounds,
finiteness, no duplicate coordinates) and stored sorted by (row, col), so the
accumulation order of a multiply never depends on the order entries were
supplied in.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from tpcgcn import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class SparseMatrix:
    """Immutable real sparse matrix in CSR form."""

    def __init__(self, rows: int, cols: int, entries: Iterable[tuple[int, int, float]]):
        if rows < 0 or cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        self.rows = int(rows)
        self.cols = int(cols)

        ent = list(entries)
        r = np.asarray([e[0] for e in ent], dtype=np.int64)
        c = np.asarray([e[1] for e in ent], dtype=np.int64)
        v = np.asarray([e[2] for e in ent], dtype=np.float64)
        if ent:
            if r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols:
                raise ValueError(
                    f"entry index out of bounds for {rows}x{cols} matrix"
                )
            if not np.all(np.isfinite(v)):
                raise ValueError("sparse entries must be finite")
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if len(ent) > 1 and np.any((r[1:] == r[:-1]) & (c[1:] == c[:-1])):
            dup = int(np.argmax((r[1:] == r[:-1]) & (c[1:] == c[:-1])))
            raise ValueError(f"duplicate entry at ({r[dup + 1]}, {c[dup + 1]})")

        self.indices = c
        self.data = v
        self.indptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(self.indptr, r + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)
        self._transpose: SparseMatrix | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    def iter_entries(self):
        for i in range(self.rows):
            for k in range(self.indptr[i], self.indptr[i + 1]):
                yield int(i), int(self.indices[k]), float(self.data[k])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.float64)
        for i, j, v in self.iter_entries():
            out[i, j] = v
        return out

    def transpose(self) -> "SparseMatrix":
        """Transposed copy; cached because backward passes reuse it."""
        if self._transpose is None:
            self._transpose = SparseMatrix(
                self.cols, self.rows, [(j, i, v) for i, j, v in self.iter_entries()]
            )
        return self._transpose

    def matmul_dense(self, dense: np.ndarray) -> np.ndarray:
        """self @ dense via the selected kernel backend."""
        dense = np.ascontiguousarray(dense, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != self.cols:
            raise ShapeError(
                f"spmm shape mismatch: {self.shape} x {tuple(dense.shape)}"
            )
        return kernels.csr_dense_matmul(self.indptr, self.indices, self.data, dense)


def sparse_identity(n: int) -> SparseMatrix:
    return SparseMatrix(n, n, [(i, i, 1.0) for i in range(n)])
