"""ℓp regression on the (small) sketched systems: least squares for p=2, IRLS for p in [1, 2)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from olar.errors import DimensionMismatch, NotConverged, ZeroOptimum
from olar.linalg import as_matrix, as_vector, least_squares, lp_norm

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 2000
DEFAULT_X_TOL = 1e-8


@dataclass
class RegressionSolution:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


def smoothing_floor(b) -> float:
    return 1e-8 * (1.0 + float(np.max(np.abs(b), initial=0.0)))


def smoothed_objective(r: np.ndarray, p: float, mu: float) -> float:
    return float(np.sum((r * r + mu * mu) ** (0.5 * p)))


def _weighted_lstsq(A: np.ndarray, b: np.ndarray, sw: np.ndarray) -> np.ndarray:
    x, *_ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    return x


def solve(
    A,
    b,
    p: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    x0=None,
    anneal: bool = False,
    strict: bool = True,
    x_tol: float = DEFAULT_X_TOL,
) -> RegressionSolution:
    """Minimise ‖Ax − b‖_p.

    p=2 is a single least-squares solve. For p < 2 this runs IRLS on the
    smoothed objective Σ (rᵢ² + μ²)^{p/2}: each step solves a least-squares
    problem with row weights (rᵢ² + μ²)^{(p−2)/2}, which never increases the
    smoothed objective. Iteration stops when the relative change of
    ‖Ax − b‖_p drops below ``tol`` and, for p > 1 where the minimiser is
    unique, the step in x is below ``x_tol`` relative to ‖x‖. The objective
    flattens long before x settles near p=1, so the first test alone can stop
    early. The best iterate (true objective) is returned. ``anneal`` divides μ by 10 every 20 iterations down to 1e-12.
    """
    A = as_matrix(A, "A")
    b = as_vector(b, "b")
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
    p = float(p)
    if not 1.0 <= p <= 2.0:
        raise ValueError(f"p must lie in [1, 2], got {p}")
    if p == 2.0:
        x = least_squares(A, b)
        return RegressionSolution(x, lp_norm(A @ x - b, 2), 1, True)

    mu = smoothing_floor(b)
    x = least_squares(A, b) if x0 is None else as_vector(x0, "x0").copy()
    r = A @ x - b
    obj = lp_norm(r, p)
    best_x, best_obj = x, obj
    history = [smoothed_objective(r, p, mu)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sw = (r * r + mu * mu) ** (0.25 * (p - 2.0))
        x_prev, x = x, _weighted_lstsq(A, b, sw)
        r = A @ x - b
        new_obj = lp_norm(r, p)
        history.append(smoothed_objective(r, p, mu))
        if new_obj < best_obj:
            best_x, best_obj = x, new_obj
        scale = max(obj, 1e-300)
        settled = p == 1.0 or np.linalg.norm(x - x_prev) <= x_tol * np.linalg.norm(x)
        if abs(obj - new_obj) <= tol * scale and settled:
            converged = True
            obj = new_obj
            break
        obj = new_obj
        if anneal and it % 20 == 0 and mu > 1e-12:
            mu = max(mu / 10.0, 1e-12)
    result = RegressionSolution(best_x, best_obj, it, converged, history)
    if strict and not converged:
        raise NotConverged(f"IRLS did not converge in {max_iter} iterations", result)
    return result


def first_order_residual(A, b, p: float, x) -> float:
    """‖Aᵀ(sign(r)|r|^{p−1})‖∞ divided by its natural scale maxⱼ Σᵢ|aᵢⱼ||rᵢ|^{p−1}."""
    A = as_matrix(A, "A")
    r = A @ np.asarray(x, dtype=np.float64) - as_vector(b, "b")
    g = np.sign(r) * np.abs(r) ** (p - 1.0)
    scale = float(np.max(np.abs(A).T @ np.abs(g), initial=0.0))
    return float(np.max(np.abs(A.T @ g), initial=0.0)) / scale if scale > 0 else 0.0


def relative_error(A, b, p: float, x, opt: float | None = None) -> float:
    """(‖Ax − b‖_p − opt) / opt, with opt from a full-data solve unless given."""
    A = as_matrix(A, "A")
    b = as_vector(b, "b")
    if opt is None:
        opt = solve(A, b, p, strict=False).objective
    if opt <= 1e-12 * lp_norm(b, p):
        raise ZeroOptimum(f"optimum {opt:.3e} is numerically zero; report absolute error instead")
    err = lp_norm(A @ np.asarray(x, dtype=np.float64) - b, p)
    return (err - opt) / opt
