"""Finite-difference solver and diagnostics for singular problems driven by -Delta + (-Delta)^s."""

from .grid import Grid, GridSpec, boundary_band, build_grid
from .operator import MixedOperator, apply_operator, normalizing_constant, weak_residual
from .linsolve import SPDSolver, green_column, principal_eigenpair, solve_dirichlet
from .analysis import exponent_table, fit_boundary_exponent
from .singular import (LebesgueWeight, SingularPowerWeight, SingularProblem, continuation_solve,
                       detect_nonexistence, regularize_weight)

__all__ = [
    "Grid", "GridSpec", "boundary_band", "build_grid",
    "MixedOperator", "apply_operator", "normalizing_constant", "weak_residual",
    "SPDSolver", "green_column", "principal_eigenpair", "solve_dirichlet",
    "exponent_table", "fit_boundary_exponent",
    "LebesgueWeight", "SingularPowerWeight", "SingularProblem", "continuation_solve",
    "detect_nonexistence", "regularize_weight",
]
