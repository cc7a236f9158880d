"""Operator-splitting QP solver: KKT optimality, statuses, backends."""

import numpy as np
import numpy.testing as npt
import pytest

from pimpc.numerics import kernels
from pimpc.numerics.qp import (
    BoxQpSolver,
    QpError,
    QpProblem,
    QpSettings,
    solve_qp,
)


def _random_box_qp(rng, n, p=0):
    M = rng.standard_normal((n, n))
    H = M.T @ M + 0.1 * np.eye(n)
    g = rng.standard_normal(n)
    lo = rng.uniform(-2.0, -0.2, n)
    hi = rng.uniform(0.2, 2.0, n)
    if p == 0:
        return QpProblem(H, g, lo, hi)
    rows = rng.standard_normal((p, n))
    mid = rows @ rng.uniform(-0.1, 0.1, n)
    return QpProblem(H, g, lo, hi, rows, mid - 1.5, mid + 1.5)


def kkt_residuals(problem, sol):
    """Stationarity, feasibility, and dual-sign violations of a solution.

    The solver's constraint operator stacks the identity above the
    general rows, so the dual vector covers both groups in that order.
    """
    A = np.eye(problem.n) if problem.rows is None \
        else np.vstack([np.eye(problem.n), problem.rows])
    lo = problem.lo if problem.rows is None \
        else np.concatenate([problem.lo, problem.row_lo])
    hi = problem.hi if problem.rows is None \
        else np.concatenate([problem.hi, problem.row_hi])
    x, y = sol.x, sol.dual
    stat = np.max(np.abs(problem.H @ x + problem.g + A.T @ y))
    Ax = A @ x
    feas = max(np.max(np.clip(lo - Ax, 0.0, None)),
               np.max(np.clip(Ax - hi, 0.0, None)))
    # multipliers must push outward: positive only at the upper bound,
    # negative only at the lower one
    margin = 1e-6 * (1.0 + np.abs(y))
    sign = 0.0
    for i in range(len(y)):
        if y[i] > margin[i]:
            sign = max(sign, hi[i] - Ax[i])
        elif y[i] < -margin[i]:
            sign = max(sign, Ax[i] - lo[i])
    return stat, feas, sign


class TestKktOptimality:
    def test_random_batch_satisfies_kkt(self):
        rng = np.random.default_rng(30)
        for i in range(100):
            n = int(rng.integers(2, 9))
            p = int(rng.integers(0, 4)) if i % 2 else 0
            problem = _random_box_qp(rng, n, p)
            sol = solve_qp(problem)
            assert sol.solved
            stat, feas, sign = kkt_residuals(problem, sol)
            assert stat <= 1e-5
            assert feas <= 1e-6
            assert sign <= 1e-5

    def test_identity_hessian_closed_form(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            n = 5
            c = rng.uniform(-3.0, 3.0, n)
            lo = np.full(n, -1.0)
            hi = np.full(n, 1.0)
            # min 0.5|x - c|^2 over the box clips c to the box
            sol = solve_qp(QpProblem(np.eye(n), -c, lo, hi))
            npt.assert_allclose(sol.x, np.clip(c, lo, hi), atol=1e-6)

    def test_unconstrained_inner_solution(self):
        rng = np.random.default_rng(32)
        M = rng.standard_normal((4, 4))
        H = M.T @ M + np.eye(4)
        g = rng.standard_normal(4)
        big = np.full(4, 1e6)
        sol = solve_qp(QpProblem(H, g, -big, big))
        npt.assert_allclose(sol.x, -np.linalg.solve(H, g), atol=1e-6)
        assert sol.n_active == 0


class TestStatuses:
    def test_infeasible_rows_detected(self):
        # x in [0, 1] but the row demands x0 + x1 >= 3
        H = np.eye(2)
        problem = QpProblem(H, np.zeros(2), [0.0, 0.0], [1.0, 1.0],
                            rows=[[1.0, 1.0]], row_lo=[3.0], row_hi=[4.0])
        sol = solve_qp(problem)
        assert sol.status == "infeasible"

    def test_iteration_limit_reported(self):
        rng = np.random.default_rng(33)
        problem = _random_box_qp(rng, 6)
        sol = solve_qp(problem, settings=QpSettings(max_iter=2, check_every=1,
                                                    adaptive_rho=False))
        assert sol.status in ("max_iter", "solved")
        assert sol.iterations <= 2

    def test_active_set_flags(self):
        # minimum at c=3 clipped to hi=1: the variable bound is active
        sol = solve_qp(QpProblem([[1.0]], [-3.0], [-1.0], [1.0]))
        npt.assert_allclose(sol.x, [1.0], atol=1e-7)
        assert sol.active[0]
        assert sol.n_active == 1


class TestWarmStart:
    def test_resolve_is_cheaper(self):
        rng = np.random.default_rng(34)
        problem = _random_box_qp(rng, 8, 3)
        solver = BoxQpSolver(problem.H, problem.lo, problem.hi,
                             problem.rows, problem.row_lo, problem.row_hi)
        first = solver.solve(problem.g)
        second = solver.solve(problem.g)
        assert second.solved
        assert second.iterations <= first.iterations
        npt.assert_allclose(second.x, first.x, atol=1e-6)

    def test_update_bounds_shifts_solution(self):
        solver = BoxQpSolver(np.eye(1), [-1.0], [1.0])
        lo_sol = solver.solve([3.0])       # pushed to the lower bound
        npt.assert_allclose(lo_sol.x, [-1.0], atol=1e-7)
        solver.update_bounds(lo=[-0.25])
        shifted = solver.solve([3.0])
        npt.assert_allclose(shifted.x, [-0.25], atol=1e-7)

    def test_explicit_warm_start_accepted(self):
        rng = np.random.default_rng(35)
        problem = _random_box_qp(rng, 5)
        solver = BoxQpSolver(problem.H, problem.lo, problem.hi)
        sol = solver.solve(problem.g, warm_start=np.zeros(5))
        assert sol.solved


class TestValidation:
    def test_bad_hessians_rejected(self):
        with pytest.raises(QpError):
            QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2),
                      -np.ones(2), np.ones(2))
        with pytest.raises(QpError):
            QpProblem(-np.eye(2), np.zeros(2), -np.ones(2), np.ones(2))

    def test_nan_and_crossed_bounds_rejected(self):
        with pytest.raises(QpError):
            QpProblem(np.eye(2), [np.nan, 0.0], -np.ones(2), np.ones(2))
        with pytest.raises(QpError):
            QpProblem(np.eye(2), np.zeros(2), np.ones(2), -np.ones(2))

    def test_row_bounds_need_rows(self):
        with pytest.raises(QpError):
            QpProblem(np.eye(2), np.zeros(2), -np.ones(2), np.ones(2),
                      row_lo=[0.0])

    def test_settings_ranges(self):
        with pytest.raises(QpError):
            QpSettings(alpha=2.5)
        with pytest.raises(QpError):
            QpSettings(rho=0.0)
        with pytest.raises(QpError):
            QpSettings(max_iter=0)


class TestBackends:
    @pytest.mark.skipif(kernels.admm_iterate_numba is None,
                        reason="numba unavailable")
    def test_numba_and_numpy_agree(self):
        rng = np.random.default_rng(36)
        for _ in range(5):
            n = 6
            problem = _random_box_qp(rng, n, 2)
            outs = {}
            for name, kern in (("numpy", kernels.admm_iterate_numpy),
                               ("numba", kernels.admm_iterate_numba)):
                s = QpSettings(adaptive_rho=False)
                A = np.vstack([np.eye(n), problem.rows])
                lo = np.concatenate([problem.lo, problem.row_lo])
                hi = np.concatenate([problem.hi, problem.row_hi])
                K = problem.H + s.rho * (A.T @ A)
                K[np.diag_indices_from(K)] += s.sigma
                Lf = np.linalg.cholesky(K)
                x = np.zeros(n)
                z = np.clip(np.zeros(A.shape[0]), lo, hi)
                y = np.zeros(A.shape[0])
                res = kern(problem.H, problem.g, A, np.ascontiguousarray(A.T),
                           np.ascontiguousarray(A.T @ A), lo, hi, Lf, x, z, y,
                           s.rho, s.sigma, s.alpha, s.eps_abs, s.eps_rel,
                           s.max_iter, s.check_every, s.adaptive_rho)
                outs[name] = (res, x.copy())
            (it_np, *_), x_np = outs["numpy"]
            (it_nb, *_), x_nb = outs["numba"]
            assert it_np == it_nb
            npt.assert_allclose(x_np, x_nb, rtol=1e-10, atol=1e-12)

    def test_selected_backend_exposed(self):
        solver = BoxQpSolver(np.eye(2), -np.ones(2), np.ones(2))
        assert solver.backend in ("numba", "numpy")
