"""Sparse directed flow graphs and their random-walk transition matrices.

A flow matrix for one time interval is stored as COO-style triples
(src, dst, weight) with weights > 0 and no duplicates. Transition matrices
normalise rows by out-degree (walks along flow direction) and columns by
in-degree (walks against it); both are kept as scipy CSR so that repeated
mat-vec stays proportional to the number of stored entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import RangeError, ShapeError


@dataclass(frozen=True)
class SparseFlowMatrix:
    """Directed weighted adjacency among n regions for one interval."""

    n: int
    src: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dst: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    weight: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float64))

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        w = np.asarray(self.weight, dtype=np.float64)
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise ShapeError("src, dst, weight must be 1-D arrays of equal length")
        if src.size:
            if src.min() < 0 or src.max() >= self.n or dst.min() < 0 or dst.max() >= self.n:
                raise RangeError("flow entry indices outside [0, n)")
            if np.any(w <= 0):
                raise ValueError("stored flow weights must be > 0")
            pair = src * self.n + dst
            if np.unique(pair).size != pair.size:
                raise ValueError("duplicate (src, dst) entries in flow matrix")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "weight", w)

    @classmethod
    def from_entries(cls, n: int, entries) -> "SparseFlowMatrix":
        """Build from an iterable of (src, dst, weight), summing duplicates
        and dropping zero weights; entries come out sorted by (src, dst)."""
        acc: dict[tuple[int, int], float] = {}
        for i, j, w in entries:
            if w == 0:
                continue
            acc[(int(i), int(j))] = acc.get((int(i), int(j)), 0.0) + float(w)
        keys = sorted(k for k, v in acc.items() if v != 0.0)
        src = np.array([k[0] for k in keys], dtype=np.int64)
        dst = np.array([k[1] for k in keys], dtype=np.int64)
        w = np.array([acc[k] for k in keys], dtype=np.float64)
        return cls(n=n, src=src, dst=dst, weight=w)

    @property
    def nnz(self) -> int:
        return int(self.src.size)

    def total(self) -> float:
        return float(self.weight.sum())

    def to_coo(self) -> sp.coo_matrix:
        return sp.coo_matrix(
            (self.weight, (self.src, self.dst)), shape=(self.n, self.n)
        )

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        dense[self.src, self.dst] = self.weight
        return dense

    def column_sums(self) -> np.ndarray:
        return np.bincount(self.dst, weights=self.weight, minlength=self.n)

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.src, weights=self.weight, minlength=self.n)

    def scaled(self, c: float) -> "SparseFlowMatrix":
        if c <= 0:
            raise ValueError("scale factor must be > 0")
        return SparseFlowMatrix(self.n, self.src, self.dst, self.weight * c)


@dataclass(frozen=True)
class TransitionPair:
    """Row-stochastic walk matrices: along flows and against them.

    Rows with zero degree are left all-zero; the k=0 identity term of the
    diffusion series still passes the region's own signal through.
    """

    out_transition: sp.csr_matrix
    in_transition: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.out_transition.shape[0]


def make_transitions(f: SparseFlowMatrix) -> TransitionPair:
    """Normalise a flow matrix into its walk transition pair.

    Touches each stored entry a constant number of times, so construction is
    linear in n + nnz.
    """
    out_deg = f.row_sums()
    in_deg = f.column_sums()
    with np.errstate(divide="ignore"):
        inv_out = np.where(out_deg > 0, 1.0 / out_deg, 0.0)
        inv_in = np.where(in_deg > 0, 1.0 / in_deg, 0.0)
    out_w = f.weight * inv_out[f.src]
    # row i of in_transition is column i of f, scaled by the in-degree of i
    in_w = f.weight * inv_in[f.dst]
    out_t = sp.csr_matrix((out_w, (f.src, f.dst)), shape=(f.n, f.n))
    in_t = sp.csr_matrix((in_w, (f.dst, f.src)), shape=(f.n, f.n))
    return TransitionPair(out_transition=out_t, in_transition=in_t)


def spmv(matrix: sp.spmatrix, signal: np.ndarray) -> np.ndarray:
    """Sparse matrix times graph signal; signal may be (n,) or (n, c)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] != matrix.shape[1]:
        raise ShapeError(
            f"matrix is {matrix.shape}, signal has leading dim {signal.shape[0]}"
        )
    return matrix @ signal


def receptive_field(f: SparseFlowMatrix, i: int) -> set[int]:
    """Regions flow-connected to i (either direction), excluding i itself."""
    if not 0 <= i < f.n:
        raise RangeError(f"region {i} outside [0, {f.n})")
    out_nb = f.dst[f.src == i]
    in_nb = f.src[f.dst == i]
    field_ = set(out_nb.tolist()) | set(in_nb.tolist())
    field_.discard(i)
    return field_
