"""Periodic disturbance estimators.

Three estimators share one idea: predict through the nominal model, rotate
the lifted disturbance one phase per step, and correct with a gain on the
innovation.  The linear observer runs on the augmented model; the
nonlinear variant accepts user maps and a correction closure; the
state-measurement variant needs no output map at all because the full
state is measured.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .model import AugmentedModel, LiftedDisturbance, ModelError, check_augmented_observability
from .numerics.dare import solve_dual_dare_kalman
from .numerics.linalg import numerical_rank, spectral_radius

__all__ = [
    "ObserverDesignError",
    "ObserverGains",
    "ObserverState",
    "SteadyStateReport",
    "check_gain_coverage",
    "design_gains",
    "estimator_matrix",
    "innovation_correction",
    "nonlinear_observer_step",
    "observer_step",
    "state_measurement_observer_step",
    "verify_steady_state",
]


class ObserverDesignError(ValueError):
    """Raised when observer gains cannot be designed or fail validation."""


@dataclass(frozen=True)
class ObserverGains:
    """Innovation gains for the lifted observer.

    ``L_x`` corrects the model state, ``L_d`` the lifted disturbance; both
    multiply the innovation ``e = C x_hat + Cbar d_hat_0 - y_f``.
    """

    L_x: np.ndarray
    L_d: np.ndarray

    def __post_init__(self):
        L_x = np.atleast_2d(np.asarray(self.L_x, dtype=float))
        L_d = np.atleast_2d(np.asarray(self.L_d, dtype=float))
        if L_x.shape[1] != L_d.shape[1]:
            raise ObserverDesignError(
                f"gain column counts disagree: {L_x.shape[1]} vs {L_d.shape[1]}")
        if not (np.all(np.isfinite(L_x)) and np.all(np.isfinite(L_d))):
            raise ObserverDesignError("gains contain non-finite entries")
        object.__setattr__(self, "L_x", L_x)
        object.__setattr__(self, "L_d", L_d)

    @property
    def stacked(self) -> np.ndarray:
        """Gains stacked in augmented-state order."""
        return np.vstack([self.L_x, self.L_d])


@dataclass(frozen=True)
class ObserverState:
    """Estimate pair (model state, lifted disturbance) plus a step counter."""

    x_hat: np.ndarray
    d_hat: LiftedDisturbance
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float).reshape(-1))

    @classmethod
    def cold_start(cls, n_x: int, N: int, n_d: int,
                   x0: Optional[np.ndarray] = None) -> "ObserverState":
        """Zero-disturbance prior; state from a first measurement when given."""
        x_hat = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
        return cls(x_hat=x_hat, d_hat=LiftedDisturbance.zero(N, n_d), t=0)


def estimator_matrix(aug: AugmentedModel, gains: ObserverGains) -> np.ndarray:
    """Closed-loop matrix of the estimation-error dynamics.

    With the innovation convention above the error evolves through
    ``A_aug + L C_aug`` where ``L`` stacks the gains; stability means
    spectral radius < 1.
    """
    return aug.A_aug + gains.stacked @ aug.C_aug


def observer_step(state: ObserverState, u: np.ndarray, y_f: np.ndarray,
                  aug: AugmentedModel, gains: ObserverGains) -> ObserverState:
    """One update of the lifted linear observer.

    Predicts through the augmented dynamics (disturbance stack rotated one
    phase) and corrects both estimates with the innovation
    ``e = C x_hat + Cbar d_hat_0 - y_f``.
    """
    m = aug.model
    x_hat = state.x_hat
    d0 = state.d_hat.block(0)
    u = np.asarray(u, dtype=float).reshape(-1)
    y_f = np.asarray(y_f, dtype=float).reshape(-1)
    e = m.C @ x_hat + aug.channels.Cbar @ d0 - y_f
    x_next = m.A @ x_hat + aug.channels.Bbar @ d0 + m.B @ u + gains.L_x @ e
    d_next = state.d_hat.rotated().stack + gains.L_d @ e
    return ObserverState(x_hat=x_next,
                         d_hat=LiftedDisturbance(d_next, state.d_hat.n_y),
                         t=state.t + 1)


def _weight_matrix(w, dim: int, name: str) -> np.ndarray:
    if w is None:
        raise ValueError(f"{name} missing")
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return float(w) * np.eye(dim)
    if w.ndim == 1:
        if w.size != dim:
            raise ObserverDesignError(f"{name} diagonal has length {w.size}, expected {dim}")
        return np.diag(w)
    if w.shape != (dim, dim):
        raise ObserverDesignError(f"{name} must be {dim}x{dim}, got {w.shape}")
    return w


def design_gains(aug: AugmentedModel, W_x=1e-4, W_d=1e-2, V=1e-4) -> ObserverGains:
    """Kalman design of the lifted observer gains.

    Weights may be scalars (multiples of identity), diagonals, or full
    covariance matrices: ``W_x`` over the model state, ``W_d`` over the
    whole lifted stack, ``V`` over the measurement.  The disturbance block
    of the process covariance must be positive definite; the rotation has
    all its eigenvalues on the unit circle, so only injected noise makes
    those modes correctable.

    Raises
    ------
    ObserverDesignError
        If the augmented pair is unobservable, or the designed estimator
        fails the stability or rotation-reachability checks.
    """
    diag = check_augmented_observability(aug)
    if not diag.ok:
        raise ObserverDesignError("augmented pair is unobservable: " + diag.describe())
    n_x = aug.n_x
    n_d = aug.n_y * aug.N
    W = np.zeros((n_x + n_d, n_x + n_d))
    W[:n_x, :n_x] = _weight_matrix(W_x, n_x, "W_x")
    W[n_x:, n_x:] = _weight_matrix(W_d, n_d, "W_d")
    if np.min(np.linalg.eigvalsh(W[n_x:, n_x:])) <= 0.0:
        raise ObserverDesignError(
            "W_d must be positive definite: the rotation modes sit on the "
            "unit circle and stay uncorrected without injected noise")
    V = _weight_matrix(V, aug.n_y, "V")
    L, _ = solve_dual_dare_kalman(aug.A_aug, aug.C_aug, W, V)
    gains = ObserverGains(L_x=L[:n_x], L_d=L[n_x:])
    rho = spectral_radius(estimator_matrix(aug, gains))
    if rho >= 1.0:
        raise ObserverDesignError(f"designed estimator is unstable: rho={rho:.6f}")
    if not check_gain_coverage(aug.S_d, gains.L_d):
        raise ObserverDesignError("disturbance gain does not reach every rotation mode")
    return gains


def check_gain_coverage(S_d: np.ndarray, L_d: np.ndarray) -> bool:
    """Reachability of the rotation modes through the disturbance gain.

    True iff ``[L_d, S_d L_d, ..., S_d^(N-1) L_d]`` has full row rank.
    The shift has order N, so N powers exhaust the distinct blocks.
    """
    S_d = np.asarray(S_d, dtype=float)
    L_d = np.atleast_2d(np.asarray(L_d, dtype=float))
    n_d = S_d.shape[0]
    if L_d.shape[0] != n_d:
        raise ModelError(f"L_d has {L_d.shape[0]} rows, expected {n_d}")
    N = max(1, n_d // L_d.shape[1]) if L_d.shape[1] else 1
    cols = []
    block = L_d
    for _ in range(N):
        cols.append(block)
        block = S_d @ block
    M = np.hstack(cols)
    return numerical_rank(M) == n_d


@dataclass(frozen=True)
class SteadyStateReport:
    """Residuals of the periodic steady-state equations over one window.

    ``dynamics_residual`` measures how far the (state, input, disturbance)
    window is from a periodic orbit of the disturbance-augmented model;
    ``output_residual`` measures the mismatch between predicted and
    measured outputs along the window.  Both are infinity norms.
    """

    dynamics_residual: float
    output_residual: float

    @property
    def max_residual(self) -> float:
        return max(self.dynamics_residual, self.output_residual)


def verify_steady_state(aug: AugmentedModel, x_hats: np.ndarray, us: np.ndarray,
                        y_fs: np.ndarray, d_hat: LiftedDisturbance) -> SteadyStateReport:
    """Check a length-N window of estimates against the periodic equations.

    Parameters
    ----------
    aug : AugmentedModel
    x_hats : (N, n_x) ndarray
        State estimates at the window steps.
    us : (N, n_u) ndarray
        Applied inputs.
    y_fs : (N, n_y) ndarray
        Measured outputs.
    d_hat : LiftedDisturbance
        Lifted estimate at the first window step; block k is taken as the
        per-phase disturbance for step k (exact once the estimate rotates
        without correction).
    """
    m = aug.model
    N = aug.N
    x_hats = np.asarray(x_hats, dtype=float).reshape(N, m.n_x)
    us = np.asarray(us, dtype=float).reshape(N, m.n_u)
    y_fs = np.asarray(y_fs, dtype=float).reshape(N, m.n_y)
    d_blocks = d_hat.blocks()
    dyn = 0.0
    out = 0.0
    for k in range(N):
        x_next = x_hats[(k + 1) % N]
        r_dyn = m.A @ x_hats[k] + m.B @ us[k] + aug.channels.Bbar @ d_blocks[k] - x_next
        r_out = m.C @ x_hats[k] + aug.channels.Cbar @ d_blocks[k] - y_fs[k]
        dyn = max(dyn, float(np.max(np.abs(r_dyn))) if r_dyn.size else 0.0)
        out = max(out, float(np.max(np.abs(r_out))) if r_out.size else 0.0)
    return SteadyStateReport(dynamics_residual=dyn, output_residual=out)


def innovation_correction(gains: ObserverGains,
                          h: Callable[[np.ndarray, np.ndarray], np.ndarray],
                          ) -> Callable[[np.ndarray, np.ndarray, np.ndarray],
                                        Tuple[np.ndarray, np.ndarray]]:
    """Build the standard gain-times-innovation correction closure.

    ``h(x, d0)`` is the nominal output map.  The returned closure computes
    ``e = h(x_hat, d0) - y_f`` and the pair ``(L_x e, L_d e)``; with a
    linear ``h`` this reproduces the linear observer update exactly.
    """

    def correction(y_f, x_hat, d0):
        e = np.asarray(h(x_hat, d0), dtype=float).reshape(-1) - y_f
        return gains.L_x @ e, gains.L_d @ e

    return correction


def nonlinear_observer_step(state: ObserverState, u: np.ndarray, y_f: np.ndarray,
                            f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
                            correction: Callable[[np.ndarray, np.ndarray, np.ndarray],
                                                 Tuple[np.ndarray, np.ndarray]],
                            ) -> ObserverState:
    """Observer update for a nonlinear nominal model.

    ``f(x, u, d0)`` predicts the next state; ``correction(y_f, x_hat, d0)``
    returns additive corrections for the state and the lifted stack (the
    output map lives inside the correction; see
    :func:`innovation_correction`).  The stack rotates one phase per step
    exactly as in the linear observer.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    y_f = np.asarray(y_f, dtype=float).reshape(-1)
    d0 = state.d_hat.block(0)
    l_x, l_d = correction(y_f, state.x_hat, d0)
    x_next = np.asarray(f(state.x_hat, u, d0), dtype=float).reshape(-1) + np.asarray(l_x, dtype=float).reshape(-1)
    d_next = state.d_hat.rotated().stack + np.asarray(l_d, dtype=float).reshape(-1)
    return ObserverState(x_hat=x_next,
                         d_hat=LiftedDisturbance(d_next, state.d_hat.n_y),
                         t=state.t + 1)


def state_measurement_observer_step(d_hat: LiftedDisturbance, x_t: np.ndarray,
                                    u_t: np.ndarray, x_next: np.ndarray,
                                    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                                    L_d: np.ndarray) -> LiftedDisturbance:
    """Disturbance update when the full state is measured.

    The nominal model is ``x+ = f(x, u) + d0`` with the disturbance
    additive in state space.  The prediction error
    ``e = f(x_t, u_t) + d_hat_0 - x_next`` corrects the current block
    before the stack rotates, so each block is refreshed exactly once per
    period while it is the active one.  With ``L_d = -lam*I`` the
    refreshed block is the convex combination
    ``(1-lam) d_hat_0 + lam (x_next - f(x_t, u_t))``, contracting the
    per-phase error by ``1-lam`` each period.
    """
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    x_next = np.asarray(x_next, dtype=float).reshape(-1)
    L_d = np.atleast_2d(np.asarray(L_d, dtype=float))
    d0 = d_hat.block(0)
    e = np.asarray(f(x_t, u_t), dtype=float).reshape(-1) + d0 - x_next
    corrected = d_hat.copy()
    corrected.stack[:d_hat.n_y] = d0 + L_d @ e
    return corrected.rotated()
