"""Core model types for periodic-disturbance tracking control.

Holds the nominal LTI model, periodic reference, lifted disturbance stack,
and the augmented model that couples them through a cyclic shift.  The rank
conditions that gate the whole design (augmented observability and target
feasibility) live here, each with a brute-force companion used as a test
oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics.linalg import (
    controllability_matrix,
    numerical_rank,
    observability_matrix,
)

__all__ = [
    "LtiModel",
    "SelectionMatrix",
    "PeriodicReference",
    "LiftedDisturbance",
    "DisturbanceChannels",
    "AugmentedModel",
    "ConstraintBox",
    "ModelError",
    "build_shift",
    "shift_eigenvalues",
    "RankDiagnostic",
    "check_augmented_observability",
    "brute_force_augmented_observability",
    "check_target_feasibility",
    "default_channels",
]


class ModelError(ValueError):
    """Raised when a model object violates its structural requirements."""


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ModelError(f"{name} must be a matrix, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise ModelError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time nominal model ``x+ = Ax + Bu``, ``y = Cx``.

    Construction verifies that ``(A, B)`` is controllable, ``(A, C)`` is
    observable, and ``C`` has full row rank; the downstream design results
    assume all three.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != n_x:
            raise ModelError(f"B has {B.shape[0]} rows, expected {n_x}")
        if C.shape[1] != n_x:
            raise ModelError(f"C has {C.shape[1]} columns, expected {n_x}")
        if numerical_rank(controllability_matrix(A, B)) < n_x:
            raise ModelError("(A, B) is not controllable")
        if numerical_rank(observability_matrix(A, C)) < n_x:
            raise ModelError("(A, C) is not observable")
        if numerical_rank(C) < C.shape[0]:
            raise ModelError("C does not have full row rank")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class SelectionMatrix:
    """Full-row-rank map ``z = H y`` picking the controlled variables."""

    H: np.ndarray

    def __post_init__(self):
        H = _as_matrix(self.H, "H")
        object.__setattr__(self, "H", H)
        if numerical_rank(H) < H.shape[0]:
            raise ModelError("H does not have full row rank")
        if H.shape[0] > H.shape[1]:
            raise ModelError("H cannot have more rows than outputs")

    @property
    def n_r(self) -> int:
        return self.H.shape[0]

    @property
    def n_y(self) -> int:
        return self.H.shape[1]


class PeriodicReference:
    """Periodic reference stored as N samples; access is modulo N."""

    def __init__(self, samples: np.ndarray):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[0] < 1:
            raise ModelError("reference needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ModelError("reference contains non-finite entries")
        self.samples = samples
        self.N = samples.shape[0]
        self.n_r = samples.shape[1]

    def at(self, t: int) -> np.ndarray:
        return self.samples[t % self.N]

    def window(self, t: int, length: int) -> np.ndarray:
        """Samples for times ``t .. t+length-1`` as a (length, n_r) array."""
        idx = (t + np.arange(length)) % self.N
        return self.samples[idx]

    def stacked(self, phase: int) -> np.ndarray:
        """One full period starting at ``phase``, flattened blockwise."""
        return self.window(phase, self.N).reshape(-1)


class LiftedDisturbance:
    """Stack of N per-step disturbance vectors; block 0 is the current step."""

    def __init__(self, stack: np.ndarray, n_y: int):
        stack = np.asarray(stack, dtype=float).reshape(-1)
        if n_y < 1 or stack.size % n_y != 0:
            raise ModelError(f"stack of size {stack.size} does not split into n_y={n_y} blocks")
        self.stack = stack
        self.n_y = n_y
        self.N = stack.size // n_y

    @classmethod
    def zero(cls, N: int, n_y: int) -> "LiftedDisturbance":
        return cls(np.zeros(N * n_y), n_y)

    def block(self, k: int) -> np.ndarray:
        k = k % self.N
        return self.stack[k * self.n_y:(k + 1) * self.n_y]

    def blocks(self) -> np.ndarray:
        return self.stack.reshape(self.N, self.n_y)

    def rotated(self, steps: int = 1) -> "LiftedDisturbance":
        """Advance the stack ``steps`` phases: block k of the result is
        block k+steps (mod N) of this stack.  Equals left-multiplying by
        the cyclic shift ``steps`` times."""
        rolled = np.roll(self.blocks(), -steps, axis=0)
        return LiftedDisturbance(rolled.reshape(-1), self.n_y)

    def copy(self) -> "LiftedDisturbance":
        return LiftedDisturbance(self.stack.copy(), self.n_y)


@dataclass(frozen=True)
class DisturbanceChannels:
    """How the estimated disturbance enters the model: state via ``Bbar``
    (n_x, n_y) and output via ``Cbar`` (n_y, n_y)."""

    Bbar: np.ndarray
    Cbar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Bbar", _as_matrix(self.Bbar, "Bbar"))
        object.__setattr__(self, "Cbar", _as_matrix(self.Cbar, "Cbar"))
        if self.Cbar.shape[0] != self.Cbar.shape[1]:
            raise ModelError(f"Cbar must be square, got {self.Cbar.shape}")
        if self.Bbar.shape[1] != self.Cbar.shape[0]:
            raise ModelError("Bbar and Cbar disagree on the disturbance dimension")


def build_shift(N: int, n_y: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic forward-shift matrix for N blocks of size n_y, plus the
    selector for block 0.

    Returns ``(S_d, S_sel)`` with integer 0/1 entries.  ``S_d`` maps a
    lifted stack so that block k of the result equals block k+1 (mod N) of
    the argument; ``S_d ** N`` is exactly the identity.
    """
    if N < 1 or n_y < 1:
        raise ModelError("N and n_y must be positive")
    S = np.zeros((N, N))
    for i in range(N):
        S[i, (i + 1) % N] = 1.0
    S_d = np.kron(S, np.eye(n_y))
    S_sel = np.zeros((n_y, n_y * N))
    S_sel[:, :n_y] = np.eye(n_y)
    return S_d, S_sel


def shift_eigenvalues(N: int) -> np.ndarray:
    """N-th roots of unity, the spectrum of the cyclic shift."""
    return np.exp(2j * np.pi * np.arange(N) / N)


class AugmentedModel:
    """Nominal model extended with a lifted periodic disturbance.

    The augmented state is ``[x; d]`` with dynamics::

        x+ = A x + Bbar d_0 + B u
        d+ = S_d d
        y  = C x + Cbar d_0

    All derived matrices are precomputed and immutable.
    """

    def __init__(self, model: LtiModel, channels: DisturbanceChannels, N: int):
        if channels.Bbar.shape != (model.n_x, model.n_y):
            raise ModelError(
                f"Bbar shape {channels.Bbar.shape} inconsistent with model "
                f"({model.n_x}, {model.n_y})")
        if channels.Cbar.shape != (model.n_y, model.n_y):
            raise ModelError(
                f"Cbar shape {channels.Cbar.shape} inconsistent with n_y={model.n_y}")
        if N < 1:
            raise ModelError("period must be positive")
        self.model = model
        self.channels = channels
        self.N = int(N)
        self.S_d, self.S_sel = build_shift(self.N, model.n_y)
        n_x, n_y = model.n_x, model.n_y
        n_aug = n_x + n_y * N
        A_aug = np.zeros((n_aug, n_aug))
        A_aug[:n_x, :n_x] = model.A
        A_aug[:n_x, n_x:] = channels.Bbar @ self.S_sel
        A_aug[n_x:, n_x:] = self.S_d
        B_aug = np.zeros((n_aug, model.n_u))
        B_aug[:n_x, :] = model.B
        C_aug = np.zeros((n_y, n_aug))
        C_aug[:, :n_x] = model.C
        C_aug[:, n_x:] = channels.Cbar @ self.S_sel
        self.A_aug = A_aug
        self.B_aug = B_aug
        self.C_aug = C_aug

    @property
    def n_x(self) -> int:
        return self.model.n_x

    @property
    def n_u(self) -> int:
        return self.model.n_u

    @property
    def n_y(self) -> int:
        return self.model.n_y

    @property
    def n_aug(self) -> int:
        return self.model.n_x + self.model.n_y * self.N


class ConstraintBox:
    """Axis-aligned box with optional per-dimension infinite bounds."""

    def __init__(self, lower, upper):
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ModelError("box bounds must have equal length")
        if np.any(lower > upper):
            raise ModelError("box has lower > upper")
        self.lower = lower
        self.upper = upper
        self.dim = lower.size

    @classmethod
    def unbounded(cls, dim: int) -> "ConstraintBox":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def is_unbounded(self) -> bool:
        return bool(np.all(np.isinf(self.lower)) and np.all(np.isinf(self.upper)))

    def clip(self, v: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(v, self.lower), self.upper)

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def tile(self, reps: int) -> "ConstraintBox":
        return ConstraintBox(np.tile(self.lower, reps), np.tile(self.upper, reps))


@dataclass
class RankDiagnostic:
    """Outcome of a per-eigenvalue rank test.

    ``failures`` lists ``(eigenvalue, rank_found, rank_required)`` for every
    shift eigenvalue at which the pencil lost rank.
    """

    ok: bool
    failures: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "rank condition holds at all shift eigenvalues"
        parts = [f"lambda={lam:.6g}: rank {got} < {need}" for lam, got, need in self.failures]
        return "rank condition fails at " + "; ".join(parts)


def check_augmented_observability(aug: AugmentedModel) -> RankDiagnostic:
    """Observability test for the augmented model, one shift eigenvalue at a
    time.

    The augmented pair is observable iff
    ``rank [[A - lam*I, Bbar], [C, Cbar]] == n_x + n_y`` for every
    eigenvalue ``lam`` of the cyclic shift.  Conjugate pairs share a rank,
    so only the upper half of the unit circle is evaluated.
    """
    m = aug.model
    n_x, n_y = m.n_x, m.n_y
    need = n_x + n_y
    pencil = np.zeros((need, need), dtype=complex)
    pencil[:n_x, n_x:] = aug.channels.Bbar
    pencil[n_x:, :n_x] = m.C
    pencil[n_x:, n_x:] = aug.channels.Cbar
    roots = shift_eigenvalues(aug.N)
    failures = []
    for j in range(aug.N // 2 + 1):
        lam = roots[j]
        pencil[:n_x, :n_x] = m.A - lam * np.eye(n_x)
        got = numerical_rank(pencil)
        if got < need:
            failures.append((lam, got, need))
            if j != 0 and (aug.N % 2 != 0 or j != aug.N // 2):
                failures.append((np.conj(lam), got, need))
    return RankDiagnostic(ok=not failures, failures=failures)


def brute_force_augmented_observability(aug: AugmentedModel, dim_limit: int = 200) -> bool:
    """Test-oracle observability check on the full augmented pair.

    Builds the stacked observability matrix of ``(A_aug, C_aug)`` and tests
    for full column rank.  O(dim^3) and intended for tests only, hence the
    dimension limit.
    """
    if aug.n_aug > dim_limit:
        raise ValueError(f"augmented dimension {aug.n_aug} exceeds limit {dim_limit}")
    obs = observability_matrix(aug.A_aug, aug.C_aug)
    return numerical_rank(obs) == aug.n_aug


def check_target_feasibility(model: LtiModel, H: SelectionMatrix, N: int) -> RankDiagnostic:
    """Solvability test for the periodic target equations.

    Requires ``rank [[A - lam*I, B], [H C, 0]] == n_x + n_r`` at every
    shift eigenvalue; implies ``n_r <= n_u``.
    """
    if H.n_y != model.n_y:
        raise ModelError("H column count must equal model n_y")
    n_x, n_u, n_r = model.n_x, model.n_u, H.n_r
    need = n_x + n_r
    pencil = np.zeros((n_x + n_r, n_x + n_u), dtype=complex)
    pencil[:n_x, n_x:] = model.B
    pencil[n_x:, :n_x] = H.H @ model.C
    roots = shift_eigenvalues(N)
    failures = []
    for j in range(N // 2 + 1):
        lam = roots[j]
        pencil[:n_x, :n_x] = model.A - lam * np.eye(n_x)
        got = numerical_rank(pencil)
        if got < need:
            failures.append((lam, got, need))
            if j != 0 and (N % 2 != 0 or j != N // 2):
                failures.append((np.conj(lam), got, need))
    return RankDiagnostic(ok=not failures, failures=failures)


def default_channels(kind: str, model: LtiModel, N: int = 1,
                     Bbar: np.ndarray | None = None) -> DisturbanceChannels:
    """Standard disturbance-channel choices.

    ``output``     -> Bbar = 0,  Cbar = I   (disturbance on the measurement)
    ``input``      -> Cbar = 0,  Bbar = B   (n_u == n_y required unless an
                      explicit Bbar is supplied); validated against the
                      observability condition at the shift eigenvalues
    ``full_state`` -> Bbar = I,  Cbar = 0   (requires C == I)
    """
    n_x, n_y = model.n_x, model.n_y
    if kind == "output":
        return DisturbanceChannels(np.zeros((n_x, n_y)), np.eye(n_y))
    if kind == "full_state":
        if model.C.shape != (n_x, n_x) or not np.array_equal(model.C, np.eye(n_x)):
            raise ModelError("full_state channels require C == I")
        return DisturbanceChannels(np.eye(n_x), np.zeros((n_y, n_y)))
    if kind == "input":
        if Bbar is None:
            if model.n_u != n_y:
                raise ModelError(
                    "input channels need a square disturbance-to-state map; "
                    f"n_u={model.n_u} != n_y={n_y}, supply Bbar explicitly")
            Bbar = model.B
        channels = DisturbanceChannels(np.asarray(Bbar, float), np.zeros((n_y, n_y)))
        diag = check_augmented_observability(AugmentedModel(model, channels, N))
        if not diag.ok:
            raise ModelError("input disturbance map fails the observability "
                             "condition: " + diag.describe())
        return channels
    raise ModelError(f"unknown channel kind {kind!r}")
