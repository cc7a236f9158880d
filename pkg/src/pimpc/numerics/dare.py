"""Discrete algebraic Riccati solvers.

The primary path is a structured doubling iteration (quadratically
convergent, needs only dense solves); a damped fixed-point iteration backs
it up for the rare case doubling stalls.  The dual form supplies
steady-state Kalman gains for observer design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import is_detectable, is_stabilizable, spectral_radius

__all__ = ["DareSolution", "DareError", "solve_dare", "solve_dual_dare_kalman", "riccati_map"]


class DareError(RuntimeError):
    """Riccati iteration failed to converge (likely a stabilizability or
    detectability violation) or the inputs are invalid."""


@dataclass(frozen=True)
class DareSolution:
    """Stabilizing Riccati solution ``P`` with gain ``K = -(R+B'PB)^{-1}B'PA``."""

    P: np.ndarray
    K: np.ndarray
    iterations: int
    residual: float


def riccati_map(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                P: np.ndarray) -> np.ndarray:
    """One application of ``P -> Q + A'PA - A'PB (R + B'PB)^{-1} B'PA``."""
    BtP = B.T @ P
    gain_term = np.linalg.solve(R + BtP @ B, BtP @ A)
    return Q + A.T @ P @ A - (A.T @ P @ B) @ gain_term


def _dare_residual(A, B, Q, R, P) -> float:
    return float(np.linalg.norm(P - riccati_map(A, B, Q, R, P), "fro"))


def _doubling(A, B, Q, R, tol, max_iter):
    n = A.shape[0]
    eye = np.eye(n)
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    for it in range(1, max_iter + 1):
        W = eye + Gk @ Hk
        try:
            Winv_A = np.linalg.solve(W, Ak)
            Winv_G = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError as exc:
            raise DareError(f"doubling step {it}: pivot matrix singular") from exc
        A_next = Ak @ Winv_A
        G_next = Gk + Ak @ Winv_G @ Ak.T
        H_next = Hk + Ak.T @ Hk @ Winv_A
        step = np.linalg.norm(H_next - Hk, "fro")
        Ak, Gk, Hk = A_next, 0.5 * (G_next + G_next.T), 0.5 * (H_next + H_next.T)
        if step <= tol * (1.0 + np.linalg.norm(Hk, "fro")):
            return Hk, it
    raise DareError(f"doubling did not converge in {max_iter} iterations")


def _fixed_point(A, B, Q, R, tol, max_iter, damping=1.0):
    P = Q.copy()
    for it in range(1, max_iter + 1):
        P_next = riccati_map(A, B, Q, R, P)
        P_next = damping * P_next + (1.0 - damping) * P
        P_next = 0.5 * (P_next + P_next.T)
        if np.linalg.norm(P_next - P, "fro") <= tol * (1.0 + np.linalg.norm(P_next, "fro")):
            return P_next, it
        P = P_next
    raise DareError(f"fixed-point iteration did not converge in {max_iter} iterations")


def solve_dare(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-12, max_iter: int = 200) -> DareSolution:
    """Solve ``P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA`` for the
    stabilizing ``P``.

    Requires ``(A, B)`` stabilizable, ``(A, Q)`` detectable, ``Q >= 0`` and
    ``R > 0``.  The returned gain satisfies ``rho(A + B K) < 1``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    n = A.shape[0]
    if B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1], B.shape[1]):
        raise DareError("inconsistent Riccati dimensions")
    if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
        raise DareError("R must be positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-10:
        raise DareError("Q must be positive semidefinite")
    if not is_stabilizable(A, B):
        raise DareError("(A, B) is not stabilizable")

    try:
        P, iterations = _doubling(A, B, Q, R, tol, max_iter)
    except DareError:
        P, iterations = _fixed_point(A, B, Q, R, tol, max_iter * 50, damping=1.0)

    # Polish with the Riccati map itself; near the stabilizing solution it
    # contracts at rate rho(A+BK)^2, so a few sweeps reach the noise floor.
    P = 0.5 * (P + P.T)
    residual = _dare_residual(A, B, Q, R, P)
    for _ in range(25):
        P_next = riccati_map(A, B, Q, R, P)
        P_next = 0.5 * (P_next + P_next.T)
        res_next = _dare_residual(A, B, Q, R, P_next)
        if res_next >= residual:
            break
        P, residual = P_next, res_next

    BtP = B.T @ P
    K = -np.linalg.solve(R + BtP @ B, BtP @ A)
    if residual > 1e-9 * (1.0 + np.linalg.norm(P, "fro")):
        raise DareError(f"Riccati residual {residual:.3e} above tolerance")
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise DareError(f"closed loop not stable (rho={rho:.6f}); "
                        "check detectability of (A, Q)")
    return DareSolution(P=P, K=K, iterations=iterations, residual=residual)


def solve_dual_dare_kalman(A: np.ndarray, C: np.ndarray, W: np.ndarray,
                           V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Steady-state Kalman predictor design for ``x+ = Ax + w``, ``y = Cx + v``.

    Solves the dual Riccati equation for the prediction covariance ``Sigma``
    and returns ``(L, Sigma)``.  The gain is stored with the innovation
    convention used by the observer here, where the correction enters as
    ``L (-y + C xhat)``: ``L = -A Sigma C' (C Sigma C' + V)^{-1}``, so the
    estimator matrix ``A + L C`` is Schur stable.
    """
    A = np.atleast_2d(np.asarray(A, float))
    C = np.atleast_2d(np.asarray(C, float))
    W = np.atleast_2d(np.asarray(W, float))
    V = np.atleast_2d(np.asarray(V, float))
    if not is_detectable(A, C):
        raise DareError("(A, C) is not detectable; observer design impossible")
    sol = solve_dare(A.T, C.T, W, V)
    Sigma = sol.P
    # sol.K = -(V + C Sigma C')^{-1} C Sigma A', so L = K'.
    L = sol.K.T
    return L, Sigma
