"""Dense linear-algebra kernels shared by the rest of the package."""
from __future__ import annotations

import numpy as np

from olar.errors import DimensionMismatch, InvalidProbability, NonFiniteEntry, NumericBreakdown

PINV_REL_TOL = 1e-10
BREAKDOWN_TOL = 1e-14


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if M.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-d, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteEntry(f"{name} has non-finite entries")
    return M


def as_vector(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise NonFiniteEntry(f"{name} has non-finite entries")
    return v


def gram(M) -> np.ndarray:
    """Return MᵀM, symmetrised."""
    M = as_matrix(M)
    if M.size == 0:
        raise DimensionMismatch("gram of an empty matrix")
    G = M.T @ M
    return 0.5 * (G + G.T)


def pseudo_inverse(G, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Moore–Penrose inverse of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below ``rel_tol * λ_max`` are treated as zero. The all-zero
    matrix maps to the all-zero matrix.
    """
    G = as_matrix(G)
    if G.shape[0] != G.shape[1]:
        raise DimensionMismatch(f"pseudo_inverse needs a square matrix, got {G.shape}")
    G = 0.5 * (G + G.T)
    evals, evecs = np.linalg.eigh(G)
    lam_max = evals[-1] if evals.size else 0.0
    if lam_max <= 0.0:
        return np.zeros_like(G)
    keep = evals > rel_tol * lam_max
    V = evecs[:, keep]
    P = (V / evals[keep]) @ V.T
    return 0.5 * (P + P.T)


def least_squares(A, b) -> np.ndarray:
    """Minimum-norm minimiser of ‖Ax − b‖₂."""
    A = as_matrix(A, "A")
    b = as_vector(b, "b")
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return x


def rank_one_inverse_update(Ginv, a, p_t: float = 1.0) -> np.ndarray:
    """Sherman–Morrison: return (G + a aᵀ/p_t)⁻¹ given Ginv = G⁻¹."""
    if not (0.0 < p_t <= 1.0) or not np.isfinite(p_t):
        raise InvalidProbability(f"p_t must lie in (0, 1], got {p_t}")
    Ginv = np.asarray(Ginv, dtype=np.float64)
    a = as_vector(a, "a")
    u = Ginv @ a
    g = float(a @ u) / p_t
    if 1.0 + g <= BREAKDOWN_TOL:
        raise NumericBreakdown(f"1 + g = {1.0 + g:.3e}")
    out = Ginv - np.outer(u, u) / (p_t * (1.0 + g))
    return 0.5 * (out + out.T)


def rel_frobenius(X, Y) -> float:
    """‖X − Y‖_F / ‖Y‖_F (absolute error when Y is zero)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    den = np.linalg.norm(Y)
    num = np.linalg.norm(X - Y)
    return float(num / den) if den > 0 else float(num)


def lp_norm(v, p: float) -> float:
    v = np.abs(np.asarray(v, dtype=np.float64))
    if p == 2:
        return float(np.sqrt(v @ v))
    if p == 1:
        return float(v.sum())
    return float(np.sum(v**p) ** (1.0 / p))


class RowBuffer:
    """Growable row store with amortised O(d) appends."""

    def __init__(self, d: int, capacity: int = 16):
        self.d = d
        self._data = np.empty((max(capacity, 1), d), dtype=np.float64)
        self.n = 0

    def append(self, row) -> None:
        if self.n == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self.d), dtype=np.float64)
            grown[: self.n] = self._data[: self.n]
            self._data = grown
        self._data[self.n] = row
        self.n += 1

    def extend(self, rows) -> None:
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.d)
        need = self.n + rows.shape[0]
        if need > self._data.shape[0]:
            grown = np.empty((max(need, 2 * self._data.shape[0]), self.d), dtype=np.float64)
            grown[: self.n] = self._data[: self.n]
            self._data = grown
        self._data[self.n: need] = rows
        self.n = need

    def clear(self) -> None:
        self.n = 0

    @property
    def view(self) -> np.ndarray:
        return self._data[: self.n]

    def __len__(self) -> int:
        return self.n
