"""CSR sparsity patterns for undirected graphs."""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..exceptions import ContractError


@dataclass(frozen=True, eq=False)
class SparsePattern:
    """Symmetric CSR pattern. Column indices are sorted within each row."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        if offsets.shape != (self.n + 1,) or offsets[0] != 0 or offsets[-1] != cols.size:
            raise ContractError("row_offsets inconsistent with col_indices")
        if np.any(np.diff(offsets) < 0):
            raise ContractError("row_offsets must be non-decreasing")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n):
            raise ContractError("column index out of range")
        keys = self.keys
        if np.any(np.diff(keys) <= 0):
            raise ContractError("columns must be strictly increasing within a row")
        # the transpose lookup doubles as the symmetry check
        _ = self.transpose_perm
        offsets.setflags(write=False)
        cols.setflags(write=False)

    @classmethod
    def from_pairs(cls, n, rows, cols):
        """Build from directed (row, col) entries; entries must be unique."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
        return cls(n, offsets, cols)

    @classmethod
    def from_edges(cls, n, edges, self_loops=False):
        """Symmetric pattern from undirected pairs ``u < v``."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        rows = [edges[:, 0], edges[:, 1]]
        cols = [edges[:, 1], edges[:, 0]]
        if self_loops:
            rows.append(np.arange(n))
            cols.append(np.arange(n))
        return cls.from_pairs(n, np.concatenate(rows), np.concatenate(cols))

    @property
    def nnz(self):
        return int(self.col_indices.size)

    @cached_property
    def rows(self):
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_offsets))

    @cached_property
    def keys(self):
        return self.rows * self.n + self.col_indices

    @cached_property
    def transpose_perm(self):
        """``perm[k]`` is the position of entry ``(j, i)`` for entry ``k = (i, j)``."""
        target = self.col_indices * self.n + self.rows
        perm = np.searchsorted(self.keys, target)
        perm = np.minimum(perm, max(self.nnz - 1, 0))
        if self.nnz and not np.array_equal(self.keys[perm], target):
            raise ContractError("pattern is not symmetric")
        return perm

    def degrees(self):
        return np.diff(self.row_offsets)

    def to_scipy(self, values):
        return sp.csr_matrix(
            (np.asarray(values, dtype=np.float64), self.col_indices, self.row_offsets),
            shape=(self.n, self.n),
        )

    def to_dense(self, values):
        out = np.zeros((self.n, self.n))
        out[self.rows, self.col_indices] = values
        return out


@dataclass(frozen=True, eq=False)
class SparseWeighted:
    pattern: SparsePattern
    edge_values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.edge_values, dtype=np.float64)
        if values.shape != (self.pattern.nnz,):
            raise ContractError(
                f"edge_values has shape {values.shape}, pattern has {self.pattern.nnz} entries"
            )
        if not np.all(np.isfinite(values)):
            raise ContractError("edge_values must be finite")
        object.__setattr__(self, "edge_values", values)

    def to_dense(self):
        return self.pattern.to_dense(self.edge_values)
