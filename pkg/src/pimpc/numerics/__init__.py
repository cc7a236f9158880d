"""Numerical building blocks: rank tests, Riccati solvers, cyclic systems, QP."""

from .linalg import (
    BlockCyclicSolver,
    controllability_matrix,
    is_detectable,
    is_stabilizable,
    numerical_rank,
    observability_matrix,
    solve_block_cyclic,
    spectral_radius,
)
from .dare import DareError, DareSolution, riccati_map, solve_dare, solve_dual_dare_kalman
from .qp import (
    BoxQpSolver,
    QpError,
    QpProblem,
    QpSettings,
    QpSolution,
    solve_qp,
)
from . import kernels

__all__ = [
    "BlockCyclicSolver",
    "BoxQpSolver",
    "DareError",
    "DareSolution",
    "QpError",
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "controllability_matrix",
    "is_detectable",
    "is_stabilizable",
    "kernels",
    "numerical_rank",
    "observability_matrix",
    "riccati_map",
    "solve_block_cyclic",
    "solve_dare",
    "solve_qp",
    "spectral_radius",
]
