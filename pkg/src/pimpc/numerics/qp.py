"""Box-constrained convex QP solver built on the ADMM kernels.

Solves

    minimize   0.5 x'Hx + g'x
    subject to lo <= x <= hi            (variable box)
               row_lo <= Gx <= row_hi   (optional general rows)

with H symmetric positive definite.  The splitting constraint stacks the
identity over G, so every bound lands in a single projection.  Problems
with fixed structure (H, G) and varying linear term reuse a
:class:`BoxQpSolver` workspace, which keeps the factorization and warm
starts between calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels


class QpError(ValueError):
    """Raised for structurally invalid QP data."""


@dataclass(frozen=True)
class QpSettings:
    """Tuning knobs for the ADMM iteration."""

    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    check_every: int = 25
    adaptive_rho: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise QpError("relaxation alpha must lie in (0, 2)")
        if self.rho <= 0.0 or self.sigma <= 0.0:
            raise QpError("rho and sigma must be positive")
        if self.max_iter < 1 or self.check_every < 1:
            raise QpError("iteration counts must be positive")


def _as_vector(v, n, name):
    arr = np.ascontiguousarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise QpError(f"{name} has length {arr.shape[0]}, expected {n}")
    if np.any(np.isnan(arr)):
        raise QpError(f"{name} contains NaN")
    return arr


def _check_bounds(lo, hi, name):
    if np.any(lo > hi):
        raise QpError(f"{name}: lower bound exceeds upper bound")


@dataclass(frozen=True)
class QpProblem:
    """Validated problem data.

    Parameters
    ----------
    H : (n, n) ndarray
        Symmetric positive definite Hessian.
    g : (n,) ndarray
        Linear cost term.
    lo, hi : (n,) ndarray
        Variable box; entries may be ``-inf`` / ``+inf``.
    rows : (p, n) ndarray, optional
        General constraint rows ``row_lo <= rows @ x <= row_hi``.
    row_lo, row_hi : (p,) ndarray, optional
        Bounds for the general rows.
    """

    H: np.ndarray
    g: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rows: Optional[np.ndarray] = None
    row_lo: Optional[np.ndarray] = None
    row_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.ascontiguousarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise QpError("Hessian must be square")
        n = H.shape[0]
        if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12):
            raise QpError("Hessian must be symmetric")
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise QpError("Hessian must be positive definite") from None
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", _as_vector(self.g, n, "g"))
        lo = _as_vector(self.lo, n, "lo")
        hi = _as_vector(self.hi, n, "hi")
        _check_bounds(lo, hi, "variable box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.rows is None:
            if self.row_lo is not None or self.row_hi is not None:
                raise QpError("row bounds given without constraint rows")
            return
        G = np.ascontiguousarray(self.rows, dtype=float)
        if G.ndim != 2 or G.shape[1] != n:
            raise QpError(f"constraint rows must have {n} columns")
        p = G.shape[0]
        rlo = _as_vector(self.row_lo, p, "row_lo")
        rhi = _as_vector(self.row_hi, p, "row_hi")
        _check_bounds(rlo, rhi, "constraint rows")
        object.__setattr__(self, "rows", G)
        object.__setattr__(self, "row_lo", rlo)
        object.__setattr__(self, "row_hi", rhi)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def n_rows(self) -> int:
        return 0 if self.rows is None else self.rows.shape[0]


@dataclass(frozen=True)
class QpSolution:
    """Result of one QP solve."""

    x: np.ndarray
    dual: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    status: str
    active: np.ndarray = field(repr=False)

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))


_STATUS_NAMES = {
    kernels.STATUS_SOLVED: "solved",
    kernels.STATUS_MAX_ITER: "max_iter",
    kernels.STATUS_INFEASIBLE: "infeasible",
}


class BoxQpSolver:
    """Reusable ADMM workspace for a fixed (H, rows) structure.

    The constraint operator, its Gram matrix, and the Cholesky factor of
    the regularized KKT matrix are built once.  Successive calls to
    :meth:`solve` may change the linear term and the bounds and reuse the
    previous primal/dual iterates as a warm start.
    """

    def __init__(self, H, lo, hi, rows=None, row_lo=None, row_hi=None,
                 settings: Optional[QpSettings] = None):
        g0 = np.zeros(np.asarray(H).shape[0])
        problem = QpProblem(H, g0, lo, hi, rows, row_lo, row_hi)
        self.settings = settings if settings is not None else QpSettings()
        self._H = problem.H
        n = problem.n
        if problem.rows is None:
            A = np.eye(n)
        else:
            A = np.vstack([np.eye(n), problem.rows])
        self._A = np.ascontiguousarray(A)
        self._At = np.ascontiguousarray(A.T)
        self._AtA = np.ascontiguousarray(A.T @ A)
        self._n = n
        self._m = A.shape[0]
        self._lo = np.concatenate([problem.lo, problem.row_lo]) if problem.rows is not None else problem.lo.copy()
        self._hi = np.concatenate([problem.hi, problem.row_hi]) if problem.rows is not None else problem.hi.copy()
        self._rho = self.settings.rho
        self._Lf = self._factor(self._rho)
        self._x = np.zeros(n)
        self._z = np.zeros(self._m)
        self._y = np.zeros(self._m)
        np.clip(self._z, self._lo, self._hi, out=self._z)

    def _factor(self, rho: float) -> np.ndarray:
        K = self._H + rho * self._AtA
        K[np.diag_indices_from(K)] += self.settings.sigma
        return np.linalg.cholesky(K)

    @property
    def backend(self) -> str:
        return kernels.BACKEND

    def update_bounds(self, lo=None, hi=None, row_lo=None, row_hi=None) -> None:
        """Replace bound vectors without rebuilding the factorization."""
        n = self._n
        if lo is not None:
            self._lo[:n] = _as_vector(lo, n, "lo")
        if hi is not None:
            self._hi[:n] = _as_vector(hi, n, "hi")
        p = self._m - n
        if row_lo is not None:
            self._lo[n:] = _as_vector(row_lo, p, "row_lo")
        if row_hi is not None:
            self._hi[n:] = _as_vector(row_hi, p, "row_hi")
        _check_bounds(self._lo, self._hi, "bounds")

    def reset(self) -> None:
        """Restore the as-built state: zero iterates, initial penalty."""
        self._x[:] = 0.0
        self._z[:] = 0.0
        self._y[:] = 0.0
        np.clip(self._z, self._lo, self._hi, out=self._z)
        if self._rho != self.settings.rho:
            self._rho = self.settings.rho
            self._Lf = self._factor(self._rho)

    def solve(self, g, warm_start: Optional[np.ndarray] = None) -> QpSolution:
        """Solve for the linear term ``g``, reusing the previous iterates.

        Parameters
        ----------
        g : (n,) ndarray
            Linear cost term for this solve.
        warm_start : (n,) ndarray, optional
            Primal initial guess overriding the stored iterate.

        Returns
        -------
        QpSolution
        """
        g = _as_vector(g, self._n, "g")
        s = self.settings
        if warm_start is not None:
            self._x[:] = _as_vector(warm_start, self._n, "warm_start")
            self._z[:] = self._A @ self._x
            np.clip(self._z, self._lo, self._hi, out=self._z)
        iters, r_prim, r_dual, rho_out, status = kernels.admm_iterate(
            self._H, g, self._A, self._At, self._AtA, self._lo, self._hi,
            self._Lf, self._x, self._z, self._y, self._rho, s.sigma, s.alpha,
            s.eps_abs, s.eps_rel, s.max_iter, s.check_every, s.adaptive_rho)
        if rho_out != self._rho:
            self._rho = rho_out
            self._Lf = self._factor(rho_out)
        tol = 10.0 * max(s.eps_abs, 1e-12)
        z = self._z
        at_lo = np.isfinite(self._lo) & (z - self._lo <= tol * (1.0 + np.abs(self._lo)))
        at_hi = np.isfinite(self._hi) & (self._hi - z <= tol * (1.0 + np.abs(self._hi)))
        return QpSolution(
            x=self._x.copy(),
            dual=self._y.copy(),
            iterations=int(iters),
            primal_residual=float(r_prim),
            dual_residual=float(r_dual),
            status=_STATUS_NAMES[int(status)],
            active=at_lo | at_hi,
        )


def solve_qp(problem: QpProblem, warm_start: Optional[np.ndarray] = None,
             settings: Optional[QpSettings] = None) -> QpSolution:
    """One-shot solve of a validated :class:`QpProblem`."""
    solver = BoxQpSolver(problem.H, problem.lo, problem.hi, problem.rows,
                         problem.row_lo, problem.row_hi, settings=settings)
    return solver.solve(problem.g, warm_start=warm_start)
