"""Receding-horizon controllers.

Two formulations share the disturbance plumbing.  The linear controller
tracks the periodic targets through a condensed QP whose terminal cost
comes from the infinite-horizon regulator, which makes the unconstrained
solution coincide with the regulator feedback around the target orbit.
The nonlinear controller skips targets entirely: it penalizes deviation
of the output from the reference and non-periodicity of the input
sequence, solved by Gauss-Newton sequential quadratic programming.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import (
    AugmentedModel,
    ConstraintBox,
    LiftedDisturbance,
    ModelError,
    SelectionMatrix,
)
from .numerics.dare import solve_dare
from .numerics.qp import BoxQpSolver, QpSettings

__all__ = [
    "LinearMpc",
    "MpcConfig",
    "MpcError",
    "MpcStep",
    "NmpcConfig",
    "NmpcStep",
    "NonlinearMpc",
    "TerminalCost",
    "VARIANTS",
    "build_terminal",
    "expand_estimate",
]

VARIANTS = ("standard", "offset-free", "pi-mpc")


class MpcError(ValueError):
    """Raised for invalid controller configuration or data."""


def _sym_check(M, name, dim, psd=True, pd=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (dim, dim):
        raise MpcError(f"{name} must be {dim}x{dim}, got {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise MpcError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(M)
    if pd and w[0] <= 0.0:
        raise MpcError(f"{name} must be positive definite (min eig {w[0]:.3e})")
    if psd and w[0] < -1e-10 * max(1.0, w[-1]):
        raise MpcError(f"{name} must be positive semidefinite (min eig {w[0]:.3e})")
    return M


@dataclass(frozen=True)
class MpcConfig:
    """Weights, horizon, and boxes for the linear tracking controller."""

    Q: np.ndarray
    R: np.ndarray
    horizon: int
    state_box: Optional[ConstraintBox] = None
    input_box: Optional[ConstraintBox] = None
    slack_penalty: float = 1e6
    qp_settings: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        n_x = np.atleast_2d(np.asarray(self.Q)).shape[0]
        n_u = np.atleast_2d(np.asarray(self.R)).shape[0]
        object.__setattr__(self, "Q", _sym_check(self.Q, "Q", n_x, psd=True))
        object.__setattr__(self, "R", _sym_check(self.R, "R", n_u, pd=True))
        if self.horizon < 1:
            raise MpcError("horizon must be >= 1")
        if self.slack_penalty <= 0.0:
            raise MpcError("slack penalty must be positive")
        if self.state_box is not None and self.state_box.dim != n_x:
            raise MpcError("state box dimension mismatch")
        if self.input_box is not None and self.input_box.dim != n_u:
            raise MpcError("input box dimension mismatch")


@dataclass(frozen=True)
class TerminalCost:
    """Infinite-horizon cost-to-go and the matching feedback gain."""

    P: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        _sym_check(P, "P", P.shape[0], pd=True)
        if K.shape[1] != P.shape[0]:
            raise MpcError("terminal gain width must match P")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "K", K)


def build_terminal(model, Q, R) -> TerminalCost:
    """Terminal cost from the infinite-horizon regulator of (A, B, Q, R)."""
    sol = solve_dare(model.A, model.B, Q, R)
    return TerminalCost(P=sol.P, K=sol.K)


def expand_estimate(variant: str, d_obs: LiftedDisturbance, N: int) -> LiftedDisturbance:
    """Map an observer estimate to the length-N stack a controller needs.

    ``standard`` ignores the estimate entirely; ``offset-free`` holds one
    constant block and tiles it across the period; ``pi-mpc`` passes the
    full lifted estimate through.
    """
    if variant == "standard":
        return LiftedDisturbance.zero(N, d_obs.n_y)
    if variant == "offset-free":
        if d_obs.N != 1:
            raise MpcError("offset-free variant expects a single-block estimate")
        return LiftedDisturbance(np.tile(d_obs.stack, N), d_obs.n_y)
    if variant == "pi-mpc":
        if d_obs.N != N:
            raise MpcError(f"estimate period {d_obs.N} does not match {N}")
        return d_obs
    raise MpcError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class MpcStep:
    """Result of one receding-horizon solve."""

    u0: np.ndarray
    inputs: np.ndarray
    states: np.ndarray
    status: str
    iterations: int
    active_constraints: int
    primal_residual: float
    dual_residual: float


class LinearMpc:
    """Condensed-QP tracking controller around periodic targets.

    States are eliminated through the prediction matrices, leaving the
    input sequence (plus state-constraint slacks when a state box is
    configured) as the decision variable.  The Hessian is fixed, so one
    factorization serves the whole closed loop; the linear term absorbs
    the current state, disturbance estimate, and targets.  State bounds
    are softened with quadratically penalized slacks; input bounds stay
    hard and the returned first input is projected onto them exactly.
    """

    def __init__(self, aug: AugmentedModel, cfg: MpcConfig, term: TerminalCost):
        m = aug.model
        L = cfg.horizon
        if L >= aug.N and aug.N > 1:
            raise MpcError(f"horizon {L} must be shorter than the period {aug.N}")
        if cfg.Q.shape[0] != m.n_x or cfg.R.shape[0] != m.n_u:
            raise MpcError("weight dimensions do not match the model")
        if term.P.shape[0] != m.n_x:
            raise MpcError("terminal cost dimension does not match the model")
        self.aug = aug
        self.cfg = cfg
        self.term = term
        n_x, n_u, n_d = m.n_x, m.n_u, m.n_y

        # prediction matrices: stacked x_1..x_L from x0, inputs, disturbances
        Phi = np.zeros((L * n_x, n_x))
        Gamma = np.zeros((L * n_x, L * n_u))
        Theta = np.zeros((L * n_x, L * n_d))
        Ak = np.eye(n_x)
        powers = [Ak]
        for _ in range(L):
            Ak = m.A @ Ak
            powers.append(Ak)
        for i in range(L):
            Phi[i * n_x:(i + 1) * n_x] = powers[i + 1]
            for j in range(i + 1):
                blk = powers[i - j]
                Gamma[i * n_x:(i + 1) * n_x, j * n_u:(j + 1) * n_u] = blk @ m.B
                Theta[i * n_x:(i + 1) * n_x, j * n_d:(j + 1) * n_d] = blk @ aug.channels.Bbar
        Qbar = np.zeros((L * n_x, L * n_x))
        for k in range(L - 1):
            Qbar[k * n_x:(k + 1) * n_x, k * n_x:(k + 1) * n_x] = cfg.Q
        Qbar[(L - 1) * n_x:, (L - 1) * n_x:] = term.P
        Rbar = np.kron(np.eye(L), cfg.R)
        self._Phi, self._Gamma, self._Theta = Phi, Gamma, Theta
        self._Qbar, self._Rbar = Qbar, Rbar
        self._GtQ = Gamma.T @ Qbar

        n_var = L * n_u
        soft = cfg.state_box is not None and not cfg.state_box.is_unbounded
        self._soft = soft
        if cfg.input_box is not None:
            u_lo = np.tile(cfg.input_box.lower, L)
            u_hi = np.tile(cfg.input_box.upper, L)
        else:
            u_lo = np.full(n_var, -np.inf)
            u_hi = np.full(n_var, np.inf)
        H = self._GtQ @ Gamma + Rbar
        if soft:
            n_s = L * n_x
            Hfull = np.zeros((n_var + n_s, n_var + n_s))
            Hfull[:n_var, :n_var] = H
            Hfull[n_var:, n_var:] = cfg.slack_penalty * np.eye(n_s)
            lo = np.concatenate([u_lo, np.zeros(n_s)])
            hi = np.concatenate([u_hi, np.full(n_s, np.inf)])
            rows = np.vstack([
                np.hstack([Gamma, -np.eye(n_s)]),
                np.hstack([Gamma, np.eye(n_s)]),
            ])
            self._x_lo = np.tile(cfg.state_box.lower, L)
            self._x_hi = np.tile(cfg.state_box.upper, L)
            row_lo = np.concatenate([np.full(n_s, -np.inf), self._x_lo])
            row_hi = np.concatenate([self._x_hi, np.full(n_s, np.inf)])
            self._solver = BoxQpSolver(Hfull, lo, hi, rows, row_lo, row_hi,
                                       settings=cfg.qp_settings)
            self._n_s = n_s
        else:
            self._solver = BoxQpSolver(H, u_lo, u_hi, settings=cfg.qp_settings)
            self._n_s = 0
        self._n_var = n_var
        self._u_bounded = np.isfinite(u_lo) | np.isfinite(u_hi)

    def reset(self) -> None:
        """Drop the QP warm start so a rerun reproduces bit for bit."""
        self._solver.reset()

    def _window(self, d_hat: LiftedDisturbance, targets) -> tuple:
        L = self.cfg.horizon
        m = self.aug.model
        D = np.concatenate([d_hat.block(k) for k in range(L)])
        Xbar = np.concatenate([targets.state_block(k) for k in range(1, L + 1)])
        Ubar = np.concatenate([targets.input_block(k) for k in range(L)])
        return D, Xbar, Ubar

    def step(self, x_hat: np.ndarray, d_hat: LiftedDisturbance, targets) -> MpcStep:
        """Solve one receding-horizon problem and return the first input.

        ``d_hat`` block k and target blocks k are taken relative to the
        current step; the caller keeps them phase-aligned.
        """
        m = self.aug.model
        L = self.cfg.horizon
        x_hat = np.asarray(x_hat, dtype=float).reshape(m.n_x)
        if d_hat.n_y != m.n_y:
            raise MpcError("disturbance estimate width mismatch")
        D, Xbar, Ubar = self._window(d_hat, targets)
        c = self._Phi @ x_hat + self._Theta @ D - Xbar
        q_u = self._GtQ @ c - self._Rbar @ Ubar
        if self._soft:
            free = self._Phi @ x_hat + self._Theta @ D
            self._solver.update_bounds(
                row_lo=np.concatenate([np.full(self._n_s, -np.inf), self._x_lo - free]),
                row_hi=np.concatenate([self._x_hi - free, np.full(self._n_s, np.inf)]))
            q = np.concatenate([q_u, np.zeros(self._n_s)])
        else:
            q = q_u
        sol = self._solver.solve(q)
        U = sol.x[:self._n_var].reshape(L, m.n_u)
        states = np.empty((L + 1, m.n_x))
        states[0] = x_hat
        states[1:] = (self._Phi @ x_hat + self._Gamma @ sol.x[:self._n_var]
                      + self._Theta @ D).reshape(L, m.n_x)
        u0 = U[0]
        if self.cfg.input_box is not None:
            u0 = self.cfg.input_box.clip(u0)
        # active set: hard input bounds plus tight state rows; the slack
        # box is excluded (a zero slack just means the state row is slack)
        n_active = int(np.count_nonzero(sol.active[:self._n_var] & self._u_bounded))
        if self._soft:
            n_rows = 2 * self._n_s
            n_active += int(np.count_nonzero(sol.active[-n_rows:]))
        return MpcStep(u0=u0, inputs=U, states=states, status=sol.status,
                       iterations=sol.iterations, active_constraints=n_active,
                       primal_residual=sol.primal_residual,
                       dual_residual=sol.dual_residual)


@dataclass(frozen=True)
class NmpcConfig:
    """Weights, horizon, and solver knobs for the nonlinear controller."""

    Q_z: np.ndarray
    R: np.ndarray
    horizon: int
    input_box: Optional[ConstraintBox] = None
    state_box: Optional[ConstraintBox] = None
    input_rate: bool = False
    max_sqp_iter: int = 10
    bootstrap_weight: float = 1e-3
    tol_step: float = 1e-9
    tol_grad: float = 1e-6
    slack_penalty: float = 1e6
    qp_settings: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        n_r = np.atleast_2d(np.asarray(self.Q_z)).shape[0]
        n_u = np.atleast_2d(np.asarray(self.R)).shape[0]
        object.__setattr__(self, "Q_z", _sym_check(self.Q_z, "Q_z", n_r, pd=True))
        object.__setattr__(self, "R", _sym_check(self.R, "R", n_u, pd=True))
        if self.horizon < 1:
            raise MpcError("horizon must be >= 1")
        if self.max_sqp_iter < 1:
            raise MpcError("iteration cap must be >= 1")
        if not 0.0 < self.bootstrap_weight <= 1.0:
            raise MpcError("bootstrap weight must lie in (0, 1]")


@dataclass(frozen=True)
class NmpcStep:
    """Result of one sequential-quadratic solve."""

    u0: np.ndarray
    inputs: np.ndarray
    states: np.ndarray
    iterations: int
    converged: bool
    objective: float
    step_norm: float
    status: str
    active_constraints: int


def _fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                 n_out: int) -> np.ndarray:
    f0 = np.asarray(fun(x), dtype=float).reshape(n_out)
    J = np.empty((n_out, x.size))
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        J[:, i] = (np.asarray(fun(xp), dtype=float).reshape(n_out) - f0) / h
    return J


class NonlinearMpc:
    """Gauss-Newton SQP controller with an input-periodicity regularizer.

    The cost penalizes output tracking error over the horizon and the
    deviation of each input from the input applied one period earlier
    (or, with ``input_rate`` set, the deviation of input increments).
    Stages whose one-period-old input is not yet available fall back to a
    small input-magnitude regularization.

    The nominal model is ``x+ = f(x, u) + d0`` with the disturbance
    additive in state space and ``z = H h(x)`` the controlled output.
    Jacobians of ``f`` and ``h`` default to forward differences; pass
    ``f_jac(x, u) -> (df/dx, df/du)`` and ``h_jac(x) -> dh/dx`` to
    override.
    """

    def __init__(self, f: Callable, h: Callable, H: SelectionMatrix,
                 cfg: NmpcConfig, n_x: int, n_u: int,
                 f_jac: Optional[Callable] = None,
                 h_jac: Optional[Callable] = None):
        if cfg.R.shape[0] != n_u:
            raise MpcError("input weight dimension mismatch")
        if cfg.input_box is not None and cfg.input_box.dim != n_u:
            raise MpcError("input box dimension mismatch")
        if cfg.state_box is not None and cfg.state_box.dim != n_x:
            raise MpcError("state box dimension mismatch")
        self.f, self.h, self.H, self.cfg = f, h, H, cfg
        self.n_x, self.n_u = n_x, n_u
        self.n_r = H.n_r
        if cfg.Q_z.shape[0] != self.n_r:
            raise MpcError("Q_z dimension must match the selected output")
        self._f_jac = f_jac
        self._h_jac = h_jac
        self._warm: Optional[np.ndarray] = None

    def reset(self) -> None:
        """Drop the shifted warm start so a rerun reproduces bit for bit."""
        self._warm = None

    def _rollout(self, x0: np.ndarray, U: np.ndarray, d_blocks: np.ndarray) -> np.ndarray:
        L = self.cfg.horizon
        X = np.empty((L + 1, self.n_x))
        X[0] = x0
        for k in range(L):
            X[k + 1] = np.asarray(self.f(X[k], U[k]), dtype=float).reshape(self.n_x) \
                + d_blocks[k]
        if not np.all(np.isfinite(X)):
            raise FloatingPointError("prediction rollout left the finite range")
        return X

    def _stage_jacobians(self, x, u):
        if self._f_jac is not None:
            Ak, Bk = self._f_jac(x, u)
            return np.asarray(Ak, dtype=float), np.asarray(Bk, dtype=float)
        Ak = _fd_jacobian(lambda xx: self.f(xx, u), x, self.n_x)
        Bk = _fd_jacobian(lambda uu: self.f(x, uu), u, self.n_x)
        return Ak, Bk

    def _output(self, x):
        return self.H.H @ np.asarray(self.h(x), dtype=float).reshape(-1)

    def _output_jac(self, x):
        if self._h_jac is not None:
            return self.H.H @ np.asarray(self._h_jac(x), dtype=float)
        return self.H.H @ _fd_jacobian(self.h, x, self.H.n_y)

    def _input_cost_pieces(self, past_inputs, u_prev, past_prev):
        """Quadratic form of the periodicity regularizer.

        Returns ``(M, Wbar, tvec)`` so the input cost is
        ``|M u - tvec|^2_Wbar`` over the flattened input sequence.  Rows
        of stages with available history carry the full weight and (in
        rate mode) the increment operator; bootstrap stages fall back to
        plain input magnitude with the small weight.
        """
        cfg = self.cfg
        L, n_u = cfg.horizon, self.n_u
        M = np.eye(L * n_u)
        W = np.zeros((L * n_u, L * n_u))
        tvec = np.zeros(L * n_u)
        if past_inputs is None:
            past_inputs = np.full((L, n_u), np.nan)
        past_inputs = np.asarray(past_inputs, dtype=float).reshape(L, n_u)
        have = ~np.any(np.isnan(past_inputs), axis=1)
        prev_ok = past_prev is not None and not np.any(np.isnan(np.asarray(past_prev, dtype=float)))
        for k in range(L):
            sl = slice(k * n_u, (k + 1) * n_u)
            if not cfg.input_rate:
                if have[k]:
                    W[sl, sl] = cfg.R
                    tvec[sl] = past_inputs[k]
                else:
                    W[sl, sl] = cfg.bootstrap_weight * cfg.R
                continue
            back_ok = prev_ok if k == 0 else have[k - 1]
            if have[k] and back_ok:
                W[sl, sl] = cfg.R
                back = np.asarray(past_prev if k == 0 else past_inputs[k - 1], dtype=float)
                if k == 0:
                    prev = np.zeros(n_u) if u_prev is None else np.asarray(u_prev, dtype=float)
                    tvec[sl] = (past_inputs[k] - back) + prev
                else:
                    M[sl, (k - 1) * n_u:k * n_u] = -np.eye(n_u)
                    tvec[sl] = past_inputs[k] - back
            else:
                W[sl, sl] = cfg.bootstrap_weight * cfg.R
        return M, W, tvec

    def _objective(self, X, U, ref, Min, Wbar, tvec):
        cfg = self.cfg
        L = cfg.horizon
        cost = 0.0
        for k in range(L):
            dz = self._output(X[k + 1]) - ref[k]
            cost += float(dz @ cfg.Q_z @ dz)
        v = Min @ U.reshape(-1) - tvec
        cost += float(v @ Wbar @ v)
        if cfg.state_box is not None and not cfg.state_box.is_unbounded:
            over = np.maximum(X[1:] - cfg.state_box.upper, 0.0)
            under = np.maximum(cfg.state_box.lower - X[1:], 0.0)
            cost += cfg.slack_penalty * float(np.sum(over ** 2) + np.sum(under ** 2))
        return cost

    def step(self, x_hat: np.ndarray, d_hat: LiftedDisturbance,
             reference_window: np.ndarray, past_inputs: Optional[np.ndarray],
             u_prev: Optional[np.ndarray] = None,
             past_prev: Optional[np.ndarray] = None,
             warm: Optional[np.ndarray] = None) -> NmpcStep:
        """One SQP solve.

        Parameters
        ----------
        x_hat : (n_x,) ndarray
            Current state (measured or estimated).
        d_hat : LiftedDisturbance
            Lifted additive-state disturbance; block k applies at stage k,
            indices wrapping modulo its period.
        reference_window : (L, n_r) ndarray
            Reference for the predicted outputs at stages 1..L.
        past_inputs : (L, n_u) ndarray or None
            Inputs applied one period before stages 0..L-1; rows of NaN
            (or None for all) mark history not yet available.
        u_prev, past_prev : optional vectors
            Previous applied input and its one-period-old counterpart;
            only used in input-rate mode.
        warm : (L, n_u) ndarray, optional
            Initial input sequence; defaults to the previous solution.
        """
        cfg = self.cfg
        L, n_u, n_x = cfg.horizon, self.n_u, self.n_x
        x_hat = np.asarray(x_hat, dtype=float).reshape(n_x)
        ref = np.asarray(reference_window, dtype=float).reshape(L, self.n_r)
        d_blocks = np.stack([d_hat.block(k) for k in range(L)])
        if d_blocks.shape[1] != n_x:
            raise MpcError("nonlinear controller needs a state-space disturbance")
        Min, Wbar, tvec = self._input_cost_pieces(past_inputs, u_prev, past_prev)

        if warm is not None:
            U = np.asarray(warm, dtype=float).reshape(L, n_u).copy()
        elif self._warm is not None:
            U = self._warm.copy()
        else:
            U = np.zeros((L, n_u))
        if cfg.input_box is not None:
            U = np.array([cfg.input_box.clip(u) for u in U])

        box_lo = np.tile(cfg.input_box.lower, L) if cfg.input_box is not None \
            else np.full(L * n_u, -np.inf)
        box_hi = np.tile(cfg.input_box.upper, L) if cfg.input_box is not None \
            else np.full(L * n_u, np.inf)
        soft = cfg.state_box is not None and not cfg.state_box.is_unbounded

        X = self._rollout(x_hat, U, d_blocks)
        cost = self._objective(X, U, ref, Min, Wbar, tvec)
        step_norm = np.inf
        status = "max_iter"
        converged = False
        it = 0
        for it in range(1, cfg.max_sqp_iter + 1):
            # linearize the rollout: stacked dX = Gamma dU
            Gamma = np.zeros((L * n_x, L * n_u))
            for k in range(L):
                Ak, Bk = self._stage_jacobians(X[k], U[k])
                if k > 0:
                    Gamma[k * n_x:(k + 1) * n_x, :k * n_u] = \
                        Ak @ Gamma[(k - 1) * n_x:k * n_x, :k * n_u]
                Gamma[k * n_x:(k + 1) * n_x, k * n_u:(k + 1) * n_u] = Bk
            # output residuals and Jacobian w.r.t. U
            Jz = np.zeros((L * self.n_r, L * n_u))
            rz = np.empty(L * self.n_r)
            for k in range(L):
                Ck = self._output_jac(X[k + 1])
                Jz[k * self.n_r:(k + 1) * self.n_r] = Ck @ Gamma[k * n_x:(k + 1) * n_x]
                rz[k * self.n_r:(k + 1) * self.n_r] = self._output(X[k + 1]) - ref[k]
            Qz_bar = np.kron(np.eye(L), cfg.Q_z)
            v = Min @ U.reshape(-1) - tvec
            Hgn = Jz.T @ Qz_bar @ Jz + Min.T @ Wbar @ Min
            g = Jz.T @ (Qz_bar @ rz) + Min.T @ (Wbar @ v)
            if soft:
                over = np.maximum(X[1:].reshape(-1) - np.tile(cfg.state_box.upper, L), 0.0)
                under = np.maximum(np.tile(cfg.state_box.lower, L) - X[1:].reshape(-1), 0.0)
                act = ((over > 0.0) | (under > 0.0)).astype(float)
                Hgn = Hgn + cfg.slack_penalty * (Gamma.T * act) @ Gamma
                g = g + cfg.slack_penalty * (Gamma.T @ (over - under))
            Hgn = 0.5 * (Hgn + Hgn.T)
            Hgn[np.diag_indices_from(Hgn)] += 1e-10 * (1.0 + np.trace(Hgn) / Hgn.shape[0])

            # projected-gradient optimality check at the current iterate
            pg = g.copy()
            Uflat = U.reshape(-1)
            at_lo = Uflat <= box_lo + 1e-12
            at_hi = Uflat >= box_hi - 1e-12
            pg[at_lo & (pg > 0)] = 0.0
            pg[at_hi & (pg < 0)] = 0.0
            if np.max(np.abs(pg)) <= cfg.tol_grad:
                status = "solved"
                converged = True
                it -= 1
                break

            solver = BoxQpSolver(Hgn, box_lo - Uflat, box_hi - Uflat,
                                 settings=cfg.qp_settings)
            qsol = solver.solve(g)
            dU = qsol.x
            step_norm = float(np.max(np.abs(dU)))
            if step_norm <= cfg.tol_step:
                status = "solved"
                converged = True
                break
            # Armijo backtracking on the true objective
            slope = 2.0 * float(g @ dU)
            alpha = 1.0
            accepted = False
            for _ in range(12):
                U_try = (Uflat + alpha * dU).reshape(L, n_u)
                try:
                    X_try = self._rollout(x_hat, U_try, d_blocks)
                except FloatingPointError:
                    alpha *= 0.5
                    continue
                cost_try = self._objective(X_try, U_try, ref, Min, Wbar, tvec)
                if cost_try <= cost + 1e-4 * alpha * slope:
                    U, X, cost = U_try, X_try, cost_try
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                status = "stalled"
                break

        # receding-horizon prior for the next call: shift one stage
        self._warm = np.vstack([U[1:], U[-1:]])
        u0 = U[0].copy()
        if cfg.input_box is not None:
            u0 = cfg.input_box.clip(u0)
        tolb = 1e-9
        Uflat = U.reshape(-1)
        n_active = int(np.count_nonzero(
            (np.isfinite(box_lo) & (Uflat <= box_lo + tolb))
            | (np.isfinite(box_hi) & (Uflat >= box_hi - tolb))))
        return NmpcStep(u0=u0, inputs=U, states=X, iterations=it,
                        converged=converged, objective=cost,
                        step_norm=step_norm, status=status,
                        active_constraints=n_active)
