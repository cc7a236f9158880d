"""Linear-algebra utilities: rank, system tests, block-cyclic solver."""

import numpy as np
import numpy.testing as npt
import pytest

from pimpc.numerics.linalg import (
    BlockCyclicSolver,
    controllability_matrix,
    is_detectable,
    is_stabilizable,
    numerical_rank,
    observability_matrix,
    solve_block_cyclic,
    spectral_radius,
)


class TestRankAndRadius:
    def test_rank_of_constructed_matrices(self):
        rng = np.random.default_rng(10)
        for r in (1, 2, 4):
            U = rng.standard_normal((6, r))
            V = rng.standard_normal((r, 5))
            assert numerical_rank(U @ V) == r

    def test_rank_survives_tiny_noise(self):
        rng = np.random.default_rng(11)
        M = np.outer(rng.standard_normal(5), rng.standard_normal(5))
        assert numerical_rank(M + 1e-14 * rng.standard_normal((5, 5))) == 1

    def test_spectral_radius_known(self):
        A = np.diag([0.3, -0.9, 0.5])
        npt.assert_allclose(spectral_radius(A), 0.9)
        rot = 0.7 * np.array([[np.cos(1.0), -np.sin(1.0)],
                              [np.sin(1.0), np.cos(1.0)]])
        npt.assert_allclose(spectral_radius(rot), 0.7, rtol=1e-12)


class TestSystemMatrices:
    def test_controllability_shape_and_content(self):
        A = np.array([[1.0, 1.0], [0.0, 1.0]])
        B = np.array([[0.0], [1.0]])
        ctrb = controllability_matrix(A, B)
        npt.assert_array_equal(ctrb, np.array([[0.0, 1.0], [1.0, 1.0]]))

    def test_observability_is_dual(self):
        rng = np.random.default_rng(12)
        A = rng.standard_normal((3, 3))
        C = rng.standard_normal((2, 3))
        npt.assert_allclose(observability_matrix(A, C),
                            controllability_matrix(A.T, C.T).T)

    def test_stabilizable_detectable_split(self):
        # stable mode uncontrolled: still stabilizable
        A = np.diag([0.5, 2.0])
        B = np.array([[0.0], [1.0]])
        assert is_stabilizable(A, B)
        # unstable mode uncontrolled: not stabilizable
        assert not is_stabilizable(A, np.array([[1.0], [0.0]]))
        C = np.array([[0.0, 1.0]])
        assert is_detectable(A, C)
        assert not is_detectable(A, np.array([[1.0, 0.0]]))

    def test_marginal_mode_counts_as_unstable(self):
        A = np.array([[1.0]])
        assert not is_stabilizable(A, np.array([[0.0]]))
        assert is_stabilizable(A, np.array([[1.0]]))


def _dense_cyclic(A, B, G, N):
    """Dense matrix of the stacked periodic system, for oracle solves."""
    n_x = A.shape[0]
    S = np.zeros((N, N))
    for k in range(N):
        S[k, (k + 1) % N] = 1.0
    top = np.hstack([np.kron(np.eye(N), A) - np.kron(S, np.eye(n_x)),
                     np.kron(np.eye(N), B)])
    bot = np.hstack([np.kron(np.eye(N), G),
                     np.zeros((N * G.shape[0], N * B.shape[1]))])
    return np.vstack([top, bot])


class TestBlockCyclic:
    @pytest.mark.parametrize("n_x,n_u,n_g,N", [
        (2, 1, 1, 4), (3, 2, 2, 5), (2, 2, 1, 3), (4, 2, 2, 8),
    ])
    def test_matches_dense_min_norm(self, n_x, n_u, n_g, N):
        rng = np.random.default_rng(100 * n_x + 10 * n_u + N)
        A = 0.8 * rng.standard_normal((n_x, n_x)) / np.sqrt(n_x)
        B = rng.standard_normal((n_x, n_u))
        G = rng.standard_normal((n_g, n_x))
        rhs_top = rng.standard_normal(N * n_x)
        rhs_bot = rng.standard_normal(N * n_g)
        xs, us = solve_block_cyclic(A, B, G, N, rhs_top, rhs_bot)

        M = _dense_cyclic(A, B, G, N)
        dense = np.linalg.lstsq(M, np.concatenate([rhs_top, rhs_bot]),
                                rcond=None)[0]
        got = np.concatenate([xs.ravel(), us.ravel()])
        npt.assert_allclose(M @ got, np.concatenate([rhs_top, rhs_bot]),
                            atol=1e-8)
        # minimum-norm solution is unique, so the vectors match
        npt.assert_allclose(got, dense, atol=1e-8)

    def test_square_pencil_exact(self):
        rng = np.random.default_rng(13)
        A = np.array([[0.5, 0.2], [0.0, 0.3]])
        B = rng.standard_normal((2, 1))
        G = rng.standard_normal((1, 2))
        N = 6
        rhs_top = rng.standard_normal(N * 2)
        rhs_bot = rng.standard_normal(N * 1)
        xs, us = solve_block_cyclic(A, B, G, N, rhs_top, rhs_bot)
        M = _dense_cyclic(A, B, G, N)
        npt.assert_allclose(M @ np.concatenate([xs.ravel(), us.ravel()]),
                            np.concatenate([rhs_top, rhs_bot]), atol=1e-9)

    def test_solver_reuse_is_consistent(self):
        rng = np.random.default_rng(14)
        A = 0.5 * rng.standard_normal((2, 2))
        B = rng.standard_normal((2, 2))
        G = rng.standard_normal((1, 2))
        solver = BlockCyclicSolver(A, B, G, 4)
        for _ in range(3):
            rhs_top = rng.standard_normal(8)
            rhs_bot = rng.standard_normal(4)
            x1, u1 = solver.solve(rhs_top, rhs_bot)
            x2, u2 = solve_block_cyclic(A, B, G, 4, rhs_top, rhs_bot)
            npt.assert_allclose(x1, x2, atol=1e-12)
            npt.assert_allclose(u1, u2, atol=1e-12)

    def test_result_is_real(self):
        rng = np.random.default_rng(15)
        A = 0.4 * rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 2))
        G = rng.standard_normal((2, 3))
        xs, us = solve_block_cyclic(A, B, G, 5, rng.standard_normal(15),
                                    rng.standard_normal(10))
        assert xs.dtype == np.float64 and us.dtype == np.float64

    def test_period_one_degenerates_to_single_pencil(self):
        rng = np.random.default_rng(16)
        A = np.array([[0.5]])
        B = np.array([[1.0]])
        G = np.array([[1.0]])
        rhs_top = rng.standard_normal(1)
        rhs_bot = rng.standard_normal(1)
        xs, us = solve_block_cyclic(A, B, G, 1, rhs_top, rhs_bot)
        # (A - I) x + B u = rhs_top, G x = rhs_bot
        npt.assert_allclose((A[0, 0] - 1.0) * xs[0, 0] + us[0, 0], rhs_top[0])
        npt.assert_allclose(xs[0, 0], rhs_bot[0])

    def test_rank_deficient_pencil_rejected(self):
        # zero gain row makes the pencil row deficient
        A = np.array([[0.5]])
        B = np.array([[0.0]])
        G = np.array([[0.0]])
        with pytest.raises(Exception):
            BlockCyclicSolver(A, B, G, 2)
