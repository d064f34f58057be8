"""Online Lewis-weight estimators: push a row, get an estimate of its online weight."""
from __future__ import annotations

import math

import numpy as np

from olar.compression import CompressionTree, TreeParams
from olar.jl import SparseJL, default_dims, jl_apply_append
from olar.lewis import IncrementalLewis
from olar.linalg import rank_one_inverse_update
from olar.errors import NumericBreakdown


class ExactWeights:
    """w_t(A^{(t)}) from the fixed point over every row seen so far."""

    def __init__(self, d: int, p: float, tol: float, refresh_mass: float):
        # p=2 lazy appends are exact leverage scores, so never force a refresh
        mass = math.inf if p == 2.0 else refresh_mass
        self._inc = IncrementalLewis(d, p, tol, refresh_mass=mass)

    def push(self, row) -> float:
        return self._inc.append(row)

    @property
    def stored_rows(self) -> int:
        return len(self._inc.rows)


class TreeWeights:
    def __init__(self, d: int, p: float, params: TreeParams, seed: int):
        self.tree = CompressionTree(d, p, params, seed=seed)

    def push(self, row) -> float:
        return self.tree.ingest(row)

    @property
    def stored_rows(self) -> int:
        return self.tree.stored_rows


class LeverageFastWeights:
    """Online leverage scores from a Sherman–Morrison inverse and a sparse JL sketch of H = J·A·G⁻¹.

    For the incoming row a, τ ≈ ‖Ha‖² estimates aᵀ(AᵀA)⁻¹a over the rows
    seen so far, and the online leverage score is τ/(1 + τ). Rows arriving
    before the prefix has full rank get weight 1.
    """

    def __init__(self, d: int, n_declared: int, delta: float, seed: int):
        self.d = d
        m, s = default_dims(n_declared, delta)
        self.J = SparseJL(m, s, seed)
        self.F = np.zeros((m, d))
        self.gram = np.zeros((d, d))
        self.Ginv: np.ndarray | None = None
        self.H: np.ndarray | None = None
        self.rows = 0

    def push(self, row) -> float:
        a = np.asarray(row, dtype=np.float64)
        if self.Ginv is None:
            w = 1.0
        else:
            y = self.H @ a
            tau = float(y @ y)
            w = tau / (1.0 + tau)
        self.gram += np.outer(a, a)
        jl_apply_append(self.F, self.J, self.rows, a)
        self.rows += 1
        if self.Ginv is None:
            if self.rows >= self.d and np.linalg.matrix_rank(self.gram) == self.d:
                self.Ginv = np.linalg.inv(self.gram)
        else:
            try:
                self.Ginv = rank_one_inverse_update(self.Ginv, a)
            except NumericBreakdown:
                self.Ginv = np.linalg.inv(self.gram)
        if self.Ginv is not None:
            self.H = self.F @ self.Ginv
        return w

    @property
    def stored_rows(self) -> int:
        return 0


def make_estimator(mode: str, d: int, p: float, cfg, n_declared: int, seed: int):
    if mode == "exact-oracle":
        return ExactWeights(d, p, cfg.weight_tol, cfg.refresh_fraction * d)
    if mode == "compression-tree":
        params = TreeParams.default(d, n_declared, weight_tol=cfg.weight_tol)
        return TreeWeights(d, p, params, seed)
    if mode == "leverage-fast":
        return LeverageFastWeights(d, n_declared, cfg.delta, seed)
    raise ValueError(f"unknown weight mode {mode!r}")
