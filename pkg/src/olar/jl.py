"""Sparse Johnson–Lindenstrauss transform with hash-generated columns.

Column c of J has ``s`` nonzeros at distinct positions in [m] with values
±1/√s, all derived from a keyed hash of (seed, c). Appending a column never
touches earlier ones, so F = JÃ can be kept up to date one sketch row at a time.
"""
from __future__ import annotations

import math

import numpy as np

from olar.errors import DimensionMismatch, Inconsistency, InvalidShape
from olar.linalg import as_vector
from olar.sampling import CounterRNG


def default_dims(n: int, delta: float = 0.01) -> tuple[int, int]:
    """Constant-distortion sizes m = 64·ln(n/δ), s = 8·ln(n/δ) (s clamped to m)."""
    ell = math.log(max(n, 2) / delta)
    m = max(1, math.ceil(64 * ell))
    return m, min(m, max(1, math.ceil(8 * ell)))


class SparseJL:
    def __init__(self, m: int, s: int, seed: int = 0):
        if m < 1 or not 1 <= s <= m:
            raise InvalidShape(f"need m >= 1 and 1 <= s <= m, got m={m}, s={s}")
        self.m = int(m)
        self.s = int(s)
        self.seed = int(seed)
        self.cols = 0
        self._hash = CounterRNG(seed)

    def column_entries(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        """Positions and values of column ``c`` (0-based); a pure function of (seed, c)."""
        gen = np.random.default_rng(self._hash.derive(c))
        pos = gen.choice(self.m, size=self.s, replace=False)
        signs = gen.integers(0, 2, size=self.s) * 2 - 1
        return pos, signs / math.sqrt(self.s)

    def column(self, c: int) -> np.ndarray:
        col = np.zeros(self.m)
        pos, vals = self.column_entries(c)
        col[pos] = vals
        return col

    def dense(self, cols: int | None = None) -> np.ndarray:
        k = self.cols if cols is None else cols
        J = np.zeros((self.m, k))
        for c in range(k):
            pos, vals = self.column_entries(c)
            J[pos, c] = vals
        return J

    def add_column(self) -> int:
        self.cols += 1
        return self.cols - 1


def jl_new(m: int, s: int, seed: int = 0) -> SparseJL:
    return SparseJL(m, s, seed)


def jl_apply_append(F: np.ndarray, J: SparseJL, k: int, row) -> np.ndarray:
    """Add the contribution of sketch row ``k`` (0-based) to F = JÃ in place, O(s·d).

    ``k`` must equal the number of columns already folded into F.
    """
    if k != J.cols:
        raise Inconsistency(f"F holds {J.cols} sketch rows, asked to append row {k}")
    row = as_vector(row, "row")
    if F.shape != (J.m, row.size):
        raise DimensionMismatch(f"F has shape {F.shape}, expected {(J.m, row.size)}")
    pos, vals = J.column_entries(J.add_column())
    F[pos] += vals[:, None] * row[None, :]
    return F


def jl_norm_estimate(H: np.ndarray, v) -> float:
    """‖Hv‖₂²."""
    v = as_vector(v, "v")
    if H.shape[1] != v.size:
        raise DimensionMismatch(f"H has {H.shape[1]} columns, v has {v.size} entries")
    y = H @ v
    return float(y @ y)
