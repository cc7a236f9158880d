"""Dense linear-algebra helpers shared across the library.

Numerical rank, stability radii, controllability/observability stacks, and a
solver for the block-cyclic systems that define periodic steady states and
tracking targets.  The cyclic solver diagonalizes the block-permutation
structure with an FFT so each solve costs N small dense solves instead of one
large one; the dense assembly path is kept available for cross-checking.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "numerical_rank",
    "spectral_radius",
    "controllability_matrix",
    "observability_matrix",
    "is_detectable",
    "is_stabilizable",
    "BlockCyclicSolver",
    "solve_block_cyclic",
]


def numerical_rank(M: np.ndarray, rtol_scale: float = 2.0**6) -> int:
    """Rank of ``M`` via singular values.

    Tolerance is ``max(m, n) * sigma_max * eps * rtol_scale``; the extra
    factor of 2**6 absorbs roundoff in matrices assembled from products.
    """
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    eps = np.finfo(float).eps
    tol = max(M.shape) * s[0] * eps * rtol_scale
    return int(np.sum(s > tol))


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    M = np.asarray(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stack ``[B, AB, ..., A^{n-1}B]`` columnwise."""
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Stack ``[C; CA; ...; CA^{n-1}]`` rowwise."""
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def _hautus_modes_ok(A: np.ndarray, C: np.ndarray, boundary: float) -> bool:
    # Hautus test restricted to eigenvalues with |lambda| >= boundary.
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < boundary:
            continue
        pencil = np.vstack([A - lam * np.eye(n), C])
        if numerical_rank(pencil) < n:
            return False
    return True


def is_detectable(A: np.ndarray, C: np.ndarray, boundary: float = 1.0 - 1e-9) -> bool:
    """True if every marginal/unstable mode of ``A`` is visible through ``C``."""
    return _hautus_modes_ok(np.asarray(A, float), np.atleast_2d(np.asarray(C, float)), boundary)


def is_stabilizable(A: np.ndarray, B: np.ndarray, boundary: float = 1.0 - 1e-9) -> bool:
    """True if every marginal/unstable mode of ``A`` is reachable through ``B``."""
    A = np.asarray(A, float)
    B = np.atleast_2d(np.asarray(B, float))
    return _hautus_modes_ok(A.T, B.T, boundary)


class BlockCyclicSolver:
    """Solver for stacked periodic systems of the form::

        [ kron(I_N, A) - kron(S, I)    kron(I_N, B) ] [x]   [rhs_top]
        [ kron(I_N, G)                 0            ] [u] = [rhs_bot]

    with ``S`` the N-step cyclic forward shift.  The FFT along the cyclic
    block index decouples the system into N independent pencils
    ``[[A - lam_j I, B], [G, 0]]`` at the N-th roots of unity
    ``lam_j = exp(2i*pi*j/N)``.  Each pencil is solved exactly when square
    and in the minimum-norm sense when wide; by Parseval this yields the
    minimum-norm solution of the full stacked system.

    Pencil pseudo-inverses are computed once at construction; each solve is
    an FFT, N small matvecs, and an inverse FFT.
    """

    def __init__(self, A: np.ndarray, B: np.ndarray, G: np.ndarray, N: int):
        A = np.atleast_2d(np.asarray(A, float))
        B = np.atleast_2d(np.asarray(B, float))
        G = np.atleast_2d(np.asarray(G, float))
        if N < 1:
            raise ValueError("period must be >= 1")
        self.n_x = A.shape[0]
        self.n_u = B.shape[1]
        self.n_g = G.shape[0]
        self.N = int(N)
        n_x, n_u, n_g = self.n_x, self.n_u, self.n_g
        if A.shape != (n_x, n_x) or B.shape[0] != n_x or G.shape[1] != n_x:
            raise ValueError("inconsistent block dimensions")

        # Conjugate symmetry: pencils at lam and conj(lam) are conjugates,
        # so only ceil(N/2)+1 pseudo-inverses are required.
        self._pinv = []
        roots = np.exp(2j * np.pi * np.arange(self.N) / self.N)
        for j in range(self.N // 2 + 1):
            M = np.zeros((n_x + n_g, n_x + n_u), dtype=complex)
            M[:n_x, :n_x] = A - roots[j] * np.eye(n_x)
            M[:n_x, n_x:] = B
            M[n_x:, :n_x] = G
            # full row rank required for solvability at arbitrary rhs
            row_rank = numerical_rank(M)
            if row_rank < M.shape[0]:
                raise np.linalg.LinAlgError(
                    f"cyclic operator rank-deficient at shift eigenvalue {roots[j]:.6f} "
                    f"(rank {row_rank} < {M.shape[0]})"
                )
            self._pinv.append(np.linalg.pinv(M))

    def solve(self, rhs_top: np.ndarray, rhs_bot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve for the stacked ``(x, u)`` blocks.

        ``rhs_top`` is (N, n_x), ``rhs_bot`` is (N, n_g); returns
        ``(x, u)`` with shapes (N, n_x) and (N, n_u).
        """
        N, n_x, n_u = self.N, self.n_x, self.n_u
        rhs_top = np.asarray(rhs_top, float).reshape(N, n_x)
        rhs_bot = np.asarray(rhs_bot, float).reshape(N, self.n_g)

        Ft = np.fft.fft(rhs_top, axis=0)
        Fb = np.fft.fft(rhs_bot, axis=0)
        sol = np.empty((N, n_x + n_u), dtype=complex)
        half = N // 2
        for j in range(half + 1):
            sol[j] = self._pinv[j] @ np.concatenate([Ft[j], Fb[j]])
        for j in range(half + 1, N):
            sol[j] = np.conj(sol[N - j])
        xu = np.fft.ifft(sol, axis=0)
        xu = np.real_if_close(xu, tol=1e6)
        xu = np.real(xu)
        return xu[:, :n_x], xu[:, n_x:]

    def residual(self, A, B, G, x, u, rhs_top, rhs_bot) -> float:
        """Max-norm residual of the stacked equations at ``(x, u)``."""
        N = self.N
        r1 = np.empty_like(np.asarray(rhs_top, float).reshape(N, self.n_x))
        for k in range(N):
            r1[k] = A @ x[k] - x[(k + 1) % N] + B @ u[k] - rhs_top[k]
        r2 = (x @ np.asarray(G, float).T) - np.asarray(rhs_bot, float).reshape(N, self.n_g)
        return max(np.max(np.abs(r1)) if r1.size else 0.0,
                   np.max(np.abs(r2)) if r2.size else 0.0)


def solve_block_cyclic(A: np.ndarray, B: np.ndarray, G: np.ndarray, N: int,
                       rhs_top: np.ndarray, rhs_bot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-shot wrapper around :class:`BlockCyclicSolver`."""
    return BlockCyclicSolver(A, B, G, N).solve(rhs_top, rhs_bot)
