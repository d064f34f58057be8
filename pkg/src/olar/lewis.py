"""ℓp Lewis weights, leverage scores and exact online Lewis weights."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from olar.errors import DimensionMismatch, NotConverged
from olar.linalg import PINV_REL_TOL, RowBuffer, as_matrix, rank_one_inverse_update

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
_TINY = 1e-12


@dataclass
class LewisWeights:
    p: float
    weights: np.ndarray
    converged: bool
    iterations: int

    @property
    def last(self) -> float:
        return float(self.weights[-1])


def _check_p(p: float) -> float:
    p = float(p)
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    return p


def pinv_factor(M: np.ndarray, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Return F with F Fᵀ = M† for symmetric PSD M.

    Cholesky when M is comfortably positive definite, otherwise the truncated
    eigendecomposition used by ``pseudo_inverse``.
    """
    diag = np.diag(M)
    scale = float(diag.max()) if diag.size else 0.0
    if scale <= 0.0:
        return np.zeros_like(M)
    try:
        L = np.linalg.cholesky(M)
        ld = np.diag(L)
        if float(ld.min()) ** 2 > 1e3 * rel_tol * scale:
            return np.linalg.inv(L).T
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(0.5 * (M + M.T))
    lam_max = evals[-1]
    if lam_max <= 0.0:
        return np.zeros_like(M)
    keep = evals > rel_tol * lam_max
    return evecs[:, keep] / np.sqrt(evals[keep])


def _tau(A: np.ndarray, M: np.ndarray, rel_tol: float) -> np.ndarray:
    Y = A @ pinv_factor(M, rel_tol)
    return np.einsum("ij,ij->i", Y, Y)


def leverage_scores(A, rel_tol: float = PINV_REL_TOL) -> LewisWeights:
    """wᵢ = aᵢᵀ(AᵀA)†aᵢ, clamped to [0, 1]."""
    A = as_matrix(A, "A")
    tau = _tau(A, A.T @ A, rel_tol)
    return LewisWeights(2.0, np.clip(tau, 0.0, 1.0), True, 1)


def lewis_weights(
    A,
    p: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init=None,
    strict: bool = True,
    rel_tol: float = PINV_REL_TOL,
) -> LewisWeights:
    """Fixed-point iteration W ← (aᵢᵀ(AᵀW^{1−2/p}A)†aᵢ)^{p/2}.

    Starts from ``init`` (default all ones). Zero rows get weight 0 and are
    left out of the weighted Gram matrix. Stops once the largest relative
    change (absolute for weights below 1e-12) falls under ``tol``. With
    ``strict`` a run that hits ``max_iter`` raises NotConverged carrying the
    last iterate; otherwise that iterate is returned with converged=False.
    """
    p = _check_p(p)
    A = as_matrix(A, "A")
    n = A.shape[0]
    if n == 0:
        raise DimensionMismatch("Lewis weights of an empty matrix")
    if p == 2.0:
        return leverage_scores(A, rel_tol)

    nz = np.flatnonzero(np.any(A != 0.0, axis=1))
    Anz = A[nz]
    if init is None:
        w = np.ones(nz.size)
    else:
        w = np.asarray(init, dtype=np.float64).reshape(-1)
        if w.size != n:
            raise DimensionMismatch(f"init has {w.size} entries for {n} rows")
        w = np.maximum(w[nz], _TINY)
    expo = 1.0 - 2.0 / p
    half_p = 0.5 * p
    converged = False
    it = 0
    new = w
    for it in range(1, max_iter + 1):
        M = (Anz.T * w**expo) @ Anz
        tau = _tau(Anz, M, rel_tol)
        new = tau**half_p
        diff = np.abs(new - w)
        big = w > _TINY
        change = float(np.max(np.where(big, diff / w, diff))) if w.size else 0.0
        # w^{1-2/p} is undefined at 0 for p < 2
        w = np.maximum(new, _TINY)
        if change < tol:
            converged = True
            break
    out = np.zeros(n)
    out[nz] = new
    result = LewisWeights(p, out, converged, it)
    if strict and not converged:
        raise NotConverged(f"Lewis iteration did not converge in {max_iter} steps", result)
    return result


def scalar_fixed_point(tau0: float, p: float) -> float:
    """Weight of a row appended to a matrix whose weights are held fixed.

    With τ₀ = aᵀM⁻¹a for the current weighted Gram matrix M, the new row's
    weight solves w = (aᵀ(M + w^{1−2/p}aaᵀ)⁻¹a)^{p/2}, i.e. w^{2/p} + τ₀w = τ₀.
    """
    if tau0 <= 0.0:
        return 0.0
    if p == 2.0:
        return tau0 / (1.0 + tau0)
    if p == 1.0:
        return 0.5 * (math.sqrt(tau0 * tau0 + 4.0 * tau0) - tau0)
    q = 2.0 / p
    w = 1.0  # f is convex and increasing, so Newton from the right is monotone
    for _ in range(50):
        f = w**q + tau0 * w - tau0
        step = f / (q * w ** (q - 1.0) + tau0)
        w -= step
        if abs(step) <= 1e-13 * w:
            break
    return w


class IncrementalLewis:
    """Lewis weights of a growing matrix; each refresh is warm-started from the previous fixed point.

    With ``refresh_mass`` > 0 the full fixed point is only recomputed once the
    weights of rows appended since the last refresh add up to that mass. In
    between, the new row gets the scalar fixed point against the maintained
    weighted Gram inverse (older weights held at their last refreshed values).
    For p=2 the Gram matrix does not depend on the weights, so lazy appends
    are exact leverage scores.
    """

    def __init__(
        self, d: int, p: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, refresh_mass: float = 0.0
    ):
        self.p = _check_p(p)
        self.tol = tol
        self.max_iter = max_iter
        self.refresh_mass = float(refresh_mass)
        self.rows = RowBuffer(d)
        self.weights = np.empty(0)
        self.converged = True
        self.refreshes = 0
        self._minv: np.ndarray | None = None
        self._pending = 0.0

    def _weighted_inverse(self) -> np.ndarray | None:
        w = self.weights
        keep = w > _TINY
        A = self.rows.view[keep]
        M = (A.T * w[keep] ** (1.0 - 2.0 / self.p)) @ A
        evals = np.linalg.eigvalsh(M)
        if evals[0] <= 1e-10 * evals[-1]:
            return None
        Minv = np.linalg.inv(M)
        return 0.5 * (Minv + Minv.T)

    def reset(self, rows: np.ndarray, weights: np.ndarray) -> None:
        """Replace the state by ``rows`` with their (converged) ``weights``."""
        self.rows.clear()
        self.rows.extend(rows)
        self.weights = np.asarray(weights, dtype=np.float64).copy()
        self._pending = 0.0
        self._minv = self._weighted_inverse() if self.refresh_mass > 0.0 and len(self.rows) else None

    def append(self, row, strict: bool = False) -> float:
        """Append ``row`` and return its Lewis weight within the whole matrix."""
        row = np.asarray(row, dtype=np.float64).reshape(-1)
        self.rows.append(row)
        guess = 1.0
        if self.refresh_mass > 0.0 and self._minv is not None:
            guess = scalar_fixed_point(float(row @ self._minv @ row), self.p)
            self._pending += guess
            if self._pending < self.refresh_mass:
                self.weights = np.append(self.weights, guess)
                if guess > _TINY:
                    self._minv = rank_one_inverse_update(self._minv, row, min(guess ** (2.0 / self.p - 1.0), 1.0))
                return guess
        init = np.append(self.weights, guess)
        res = lewis_weights(self.rows.view, self.p, self.tol, self.max_iter, init=init, strict=strict)
        self.weights = res.weights
        self.converged = res.converged
        self.refreshes += 1
        self._pending = 0.0
        if self.refresh_mass > 0.0:
            self._minv = self._weighted_inverse()
        return res.last


def online_lewis_weights_exact(
    A, p: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, strict: bool = True
) -> np.ndarray:
    """w_i^OL = w_i(A^{(i)}), recomputing the prefix weights for every i.

    O(n) full Lewis-weight solves; meant as a reference path and test oracle.
    """
    A = as_matrix(A, "A")
    inc = IncrementalLewis(A.shape[1], p, tol, max_iter)
    out = np.empty(A.shape[0])
    for i, row in enumerate(A):
        out[i] = inc.append(row)
        if strict and not inc.converged:
            raise NotConverged(f"prefix {i + 1} did not converge", out[: i + 1].copy())
    return out
