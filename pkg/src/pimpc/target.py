"""Periodic state/input targets consistent with the disturbance estimate.

Given the current lifted estimate and the reference, the targets are the
unique (or minimum-norm) periodic orbit of the disturbance-corrected
nominal model whose selected outputs equal the reference at every phase.
The cyclic structure makes the solve an FFT plus N small pseudo-inverse
applications, cached per model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    AugmentedModel,
    LiftedDisturbance,
    ModelError,
    PeriodicReference,
    SelectionMatrix,
)
from .numerics.linalg import BlockCyclicSolver

__all__ = ["PeriodicTargets", "TargetSolver", "compute_targets", "rotate_targets"]


@dataclass(frozen=True)
class PeriodicTargets:
    """Periodic target orbit, one state/input pair per phase.

    ``x_bar[k]`` and ``u_bar[k]`` apply at time ``phase + k``; indexing
    wraps modulo the period.
    """

    x_bar: np.ndarray
    u_bar: np.ndarray
    phase: int

    def __post_init__(self):
        x_bar = np.atleast_2d(np.asarray(self.x_bar, dtype=float))
        u_bar = np.atleast_2d(np.asarray(self.u_bar, dtype=float))
        if x_bar.shape[0] != u_bar.shape[0]:
            raise ModelError("state and input targets disagree on the period")
        object.__setattr__(self, "x_bar", x_bar)
        object.__setattr__(self, "u_bar", u_bar)
        object.__setattr__(self, "phase", int(self.phase) % x_bar.shape[0])

    @property
    def N(self) -> int:
        return self.x_bar.shape[0]

    def state_block(self, k: int) -> np.ndarray:
        """Target state ``k`` steps ahead of the targets' phase."""
        return self.x_bar[k % self.N]

    def input_block(self, k: int) -> np.ndarray:
        """Target input ``k`` steps ahead of the targets' phase."""
        return self.u_bar[k % self.N]


def rotate_targets(targets: PeriodicTargets, steps: int) -> PeriodicTargets:
    """Advance the targets ``steps`` phases without resolving.

    Block k of the result is block k+steps of the input; the phase label
    advances by the same amount, so the orbit itself is unchanged.
    """
    steps = int(steps)
    return PeriodicTargets(
        x_bar=np.roll(targets.x_bar, -steps, axis=0),
        u_bar=np.roll(targets.u_bar, -steps, axis=0),
        phase=targets.phase + steps,
    )


class TargetSolver:
    """Cached solver for the periodic target equations.

    The cyclic operator depends only on (model, selection, period) and is
    factored once.  Between calls the solver remembers its last solution;
    when the new request is just the old one advanced in phase with an
    (almost) unchanged disturbance estimate, it rotates the cached orbit
    instead of resolving.  ``resolve_threshold`` bounds the allowed
    infinity-norm drift of the estimate (default effectively zero, i.e.
    resolve whenever the estimate moved at all).
    """

    def __init__(self, aug: AugmentedModel, H: SelectionMatrix,
                 resolve_threshold: float = 1e-10):
        if H.n_y != aug.n_y:
            raise ModelError("selection matrix width must equal model output size")
        self.aug = aug
        self.H = H
        self.resolve_threshold = float(resolve_threshold)
        m = aug.model
        self._G = H.H @ m.C
        self._HCbar = H.H @ aug.channels.Cbar
        self._solver = BlockCyclicSolver(m.A, m.B, self._G, aug.N)
        self._cache: Optional[tuple[np.ndarray, np.ndarray, PeriodicTargets]] = None
        self.solves = 0
        self.rotations = 0

    def reset(self) -> None:
        """Drop the cached orbit and zero the counters (fresh-build state)."""
        self._cache = None
        self.solves = 0
        self.rotations = 0

    def compute(self, d_hat: LiftedDisturbance, reference: PeriodicReference,
                phase: int) -> PeriodicTargets:
        """Targets for the window starting at ``phase``.

        ``d_hat`` block k and reference sample ``phase + k`` both refer to
        time ``phase + k``.
        """
        aug = self.aug
        N = aug.N
        if d_hat.N != N or d_hat.n_y != aug.n_y:
            raise ModelError("disturbance estimate does not match the model period")
        if reference.N != 1 and N % reference.N != 0:
            raise ModelError(
                f"reference period {reference.N} does not divide the model period {N}")
        phase = int(phase) % N
        d_blocks = d_hat.blocks()
        r_win = reference.window(phase, N)

        cached = self._lookup(d_blocks, r_win, phase)
        if cached is not None:
            self.rotations += 1
            return cached

        rhs_top = -(d_blocks @ aug.channels.Bbar.T)
        rhs_bot = r_win - d_blocks @ self._HCbar.T
        x_bar, u_bar = self._solver.solve(rhs_top, rhs_bot)
        res = self._solver.residual(aug.model.A, aug.model.B, self._G,
                                    x_bar, u_bar, rhs_top, rhs_bot)
        scale = 1.0 + max(np.max(np.abs(rhs_top)) if rhs_top.size else 0.0,
                          np.max(np.abs(rhs_bot)) if rhs_bot.size else 0.0)
        if res > 1e-8 * scale:
            raise np.linalg.LinAlgError(
                f"target equations solved to residual {res:.3e}, "
                f"exceeding 1e-8*(1+|rhs|)={1e-8 * scale:.3e}")
        targets = PeriodicTargets(x_bar=x_bar, u_bar=u_bar, phase=phase)
        self._cache = (d_blocks.copy(), r_win.copy(), targets)
        self.solves += 1
        return targets

    def _lookup(self, d_blocks, r_win, phase) -> Optional[PeriodicTargets]:
        if self._cache is None:
            return None
        d_old, r_old, targets_old = self._cache
        shift = (phase - targets_old.phase) % self.aug.N
        d_rot = np.roll(d_old, -shift, axis=0)
        r_rot = np.roll(r_old, -shift, axis=0)
        if not np.array_equal(r_rot, r_win):
            return None
        if np.max(np.abs(d_rot - d_blocks)) > self.resolve_threshold:
            return None
        rotated = rotate_targets(targets_old, shift)
        return PeriodicTargets(rotated.x_bar, rotated.u_bar, phase)


def compute_targets(aug: AugmentedModel, H: SelectionMatrix,
                    d_hat: LiftedDisturbance, reference: PeriodicReference,
                    phase: int) -> PeriodicTargets:
    """One-shot target computation (no caching)."""
    return TargetSolver(aug, H).compute(d_hat, reference, phase)
