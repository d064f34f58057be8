from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from olar.errors import NotConverged
from olar.lewis import (
    IncrementalLewis,
    leverage_scores,
    lewis_weights,
    online_lewis_weights_exact,
    scalar_fixed_point,
)

P_VALUES = [1.0, 1.5, 2.0]


def reference_lewis(A, p, iters=10_000, tol=1e-14):
    """Plain fixed-point iteration with numpy's pinv, run far past convergence."""
    w = np.ones(A.shape[0])
    for _ in range(iters):
        M = A.T @ (w[:, None] ** (1 - 2 / p) * A)
        new = np.einsum("ij,jk,ik->i", A, np.linalg.pinv(M), A) ** (p / 2)
        if np.max(np.abs(new - w) / w) < tol:
            return new
        w = new
    return w


class TestLewisWeights:
    @pytest.mark.parametrize("p", P_VALUES)
    def test_identity(self, p):
        np.testing.assert_allclose(lewis_weights(np.eye(3), p).weights, np.ones(3))

    def test_three_rows_p2(self):
        np.testing.assert_allclose(lewis_weights([[1, 0], [0, 1], [1, 1]], 2.0).weights, [2 / 3] * 3)

    def test_duplicate_rows_p2(self):
        np.testing.assert_allclose(lewis_weights([[1, 0], [1, 0], [0, 1]], 2.0).weights, [0.5, 0.5, 1.0])

    def test_long_iteration_oracle(self, rng):
        A = rng.standard_normal((8, 3))
        got = lewis_weights(A, 1.5, tol=1e-12, max_iter=10_000).weights
        np.testing.assert_allclose(got, reference_lewis(A, 1.5), atol=1e-6)

    @pytest.mark.parametrize("p", [1.0, 1.25, 1.5, 1.75])
    def test_fixed_point_residual(self, p, rng):
        A = rng.standard_normal((30, 4))
        tol = 1e-9
        w = lewis_weights(A, p, tol=tol).weights
        M = A.T @ (w[:, None] ** (1 - 2 / p) * A)
        again = np.einsum("ij,jk,ik->i", A, np.linalg.pinv(M), A) ** (p / 2)
        assert np.all(np.abs(w - again) <= 10 * tol * w)

    @pytest.mark.parametrize("p", P_VALUES)
    def test_zero_row(self, p, rng):
        A = rng.standard_normal((6, 2))
        A[3] = 0.0
        w = lewis_weights(A, p).weights
        assert w[3] == 0.0
        assert np.all(w[np.arange(6) != 3] > 0)

    def test_rank_deficient(self, rng):
        # third column is a copy of the first: the weights live in a 2-d span
        A = rng.standard_normal((10, 2))
        A = np.column_stack([A, A[:, 0]])
        w = lewis_weights(A, 1.5).weights
        assert w.sum() == pytest.approx(2.0, abs=1e-6)

    @pytest.mark.parametrize("p", P_VALUES)
    def test_right_multiplication_invariance(self, p, rng):
        A = rng.standard_normal((25, 4))
        Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        T = Q @ np.diag([1.0, 2.0, 0.5, 3.0])
        np.testing.assert_allclose(lewis_weights(A @ T, p).weights, lewis_weights(A, p).weights, atol=1e-6)

    def test_not_converged_carries_iterate(self, rng):
        A = rng.standard_normal((20, 3))
        with pytest.raises(NotConverged) as info:
            lewis_weights(A, 1.0, max_iter=1)
        assert info.value.result.weights.shape == (20,)
        relaxed = lewis_weights(A, 1.0, max_iter=1, strict=False)
        assert not relaxed.converged

    def test_bad_p(self):
        with pytest.raises(ValueError):
            lewis_weights(np.eye(2), 2.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from(P_VALUES))
    def test_range_and_sum(self, seed, p):
        g = np.random.default_rng(seed)
        n, d = int(g.integers(2, 30)), int(g.integers(1, 5))
        A = g.standard_normal((n, d)) * g.uniform(0.1, 10, size=(n, 1))
        w = lewis_weights(A, p).weights
        assert np.all(w >= 0) and np.all(w <= 1 + 1e-9)
        assert w.sum() <= d + 1e-6
        if p == 2.0:
            assert w.sum() == pytest.approx(np.linalg.matrix_rank(A), abs=1e-6)


class TestLeverageScores:
    def test_identity(self):
        np.testing.assert_allclose(leverage_scores(np.eye(4)).weights, np.ones(4))

    def test_three_rows(self):
        np.testing.assert_allclose(leverage_scores([[1, 0], [0, 1], [1, 1]]).weights, [2 / 3] * 3)

    def test_zero_row(self):
        assert leverage_scores([[1, 0], [0, 0], [0, 1]]).weights[1] == 0.0

    def test_hat_matrix_diagonal(self, rng):
        A = rng.standard_normal((15, 3))
        hat = A @ np.linalg.solve(A.T @ A, A.T)
        np.testing.assert_allclose(leverage_scores(A).weights, np.diag(hat), atol=1e-12)


class TestOnlineWeights:
    @pytest.mark.parametrize("p", P_VALUES)
    def test_full_rank_prefix_rows_are_one(self, p, rng):
        A = np.tril(rng.uniform(0.5, 2.0, size=(4, 4)))
        np.testing.assert_allclose(online_lewis_weights_exact(A, p), np.ones(4), atol=1e-8)

    def test_duplicate_second_row(self):
        w = online_lewis_weights_exact(np.array([[1.0, 0.0], [1.0, 0.0]]), 2.0)
        np.testing.assert_allclose(w, [1.0, 0.5])

    @pytest.mark.parametrize("p", P_VALUES)
    def test_matches_prefix_definition(self, p, rng):
        A = rng.standard_normal((12, 3))
        want = [lewis_weights(A[: i + 1], p).weights[-1] for i in range(12)]
        np.testing.assert_allclose(online_lewis_weights_exact(A, p), want, rtol=1e-6)

    @pytest.mark.parametrize("p", P_VALUES)
    def test_dominates_offline(self, p, rng):
        A = rng.standard_normal((40, 3))
        assert np.all(online_lewis_weights_exact(A, p) >= lewis_weights(A, p).weights - 1e-8)


class TestScalarFixedPoint:
    @pytest.mark.parametrize("p", [1.0, 1.2, 1.5, 1.8, 2.0])
    @pytest.mark.parametrize("tau0", [1e-6, 0.01, 0.3, 1.0, 7.0])
    def test_solves_equation(self, p, tau0):
        w = scalar_fixed_point(tau0, p)
        assert 0 < w <= 1
        assert w ** (2 / p) + tau0 * w == pytest.approx(tau0, rel=1e-10)

    def test_zero(self):
        assert scalar_fixed_point(0.0, 1.5) == 0.0

    def test_p2_is_leverage_of_appended_row(self, rng):
        A = rng.standard_normal((10, 3))
        a = rng.standard_normal(3)
        tau0 = a @ np.linalg.solve(A.T @ A, a)
        full = leverage_scores(np.vstack([A, a])).weights[-1]
        assert scalar_fixed_point(tau0, 2.0) == pytest.approx(full, rel=1e-12)


class TestIncrementalLewis:
    def test_p2_lazy_is_exact(self, rng):
        A = rng.standard_normal((60, 4))
        inc = IncrementalLewis(4, 2.0, refresh_mass=np.inf)
        got = np.array([inc.append(a) for a in A])
        np.testing.assert_allclose(got, online_lewis_weights_exact(A, 2.0), rtol=1e-9)

    @pytest.mark.parametrize("p", [1.0, 1.5])
    def test_lazy_stays_close(self, p, rng):
        A = rng.standard_normal((300, 5))
        inc = IncrementalLewis(5, p, tol=1e-8, refresh_mass=0.25)
        got = np.array([inc.append(a) for a in A])
        ratio = got / online_lewis_weights_exact(A, p)
        assert np.all(np.abs(ratio - 1) < 0.1)
        assert inc.refreshes < 300
