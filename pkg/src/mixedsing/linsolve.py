"""
Linear theory for the mixed operator: Dirichlet solves, the discrete energy,
Green-function columns and the principal eigenpair.

Small systems are factorized (dense Cholesky).  Large ones use conjugate
gradients preconditioned by the sparse M-matrix ``A_loc + diag(tail)``
(plus any extra diagonal); the remaining part of A is a positive
semidefinite graph Laplacian, so the preconditioned spectrum sits in
[1, O(1)] independently of h.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .operator import MixedOperator, apply_operator

logger = logging.getLogger(__name__)

DIRECT_LIMIT = 6000  # largest system factorized densely
DIRECT_TOL = 1e-10
ITERATIVE_TOL = 1e-8
CG_MAXITER = 2000


class SolverError(RuntimeError):
    """Raised when an iterative solve does not reach its tolerance."""


@dataclass
class LinearSolveResult:
    u: np.ndarray
    iterations: int
    residual: float
    method: str


class SPDSolver:
    """Solver for (A + diag(extra)) x = b, factorized once and reusable."""

    def __init__(self, op: MixedOperator, extra_diagonal=None, method: str = "auto",
                 tol: float | None = None):
        self.op = op
        n = op.size
        self.extra = np.zeros(n) if extra_diagonal is None else np.asarray(extra_diagonal, float)
        if method == "auto":
            method = "direct" if n <= DIRECT_LIMIT else "conjugate-gradient"
        if method not in ("direct", "conjugate-gradient"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.tol = tol if tol is not None else (DIRECT_TOL if method == "direct" else ITERATIVE_TOL)
        if method == "direct":
            M = np.array(op.dense)
            M[np.diag_indices(n)] += self.extra
            self._chol = sla.cho_factor(M, lower=True, overwrite_a=True, check_finite=False)
        else:
            P = op.sparse_part(self.extra).tocsc()
            self._precond = spla.splu(P)
            self._M = spla.LinearOperator((n, n), matvec=self._precond.solve, dtype=np.float64)
            self._A = spla.LinearOperator((n, n), matvec=self.matvec, dtype=np.float64)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.op.apply(x) + self.extra * x

    def solve(self, b, x0=None) -> LinearSolveResult:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.op.size,):
            raise ValueError(f"rhs has shape {b.shape}, expected ({self.op.size},)")
        if not np.all(np.isfinite(b)):
            raise ValueError("rhs contains non-finite values")
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return LinearSolveResult(np.zeros_like(b), 0, 0.0, self.method)
        if self.method == "direct":
            u = sla.cho_solve(self._chol, b, check_finite=False)
            iterations = 1
        else:
            count = [0]

            def tick(_):
                count[0] += 1

            if x0 is None:
                x0 = self._precond.solve(b)
            u, info = spla.cg(self._A, b, x0=x0, rtol=0.1 * self.tol, atol=0.0,
                              maxiter=CG_MAXITER, M=self._M, callback=tick)
            iterations = count[0]
            if info != 0:
                res = np.linalg.norm(self.matvec(u) - b) / bnorm
                raise SolverError(f"conjugate gradients stopped after {iterations} iterations "
                                  f"with relative residual {res:.3e}")
        res = float(np.linalg.norm(self.matvec(u) - b) / bnorm)
        if res > self.tol:
            raise SolverError(f"{self.method} solve residual {res:.3e} exceeds {self.tol:.1e}")
        return LinearSolveResult(u, iterations, res, self.method)


_solver_cache: dict[int, SPDSolver] = {}


def operator_solver(op: MixedOperator) -> SPDSolver:
    """The (cached) solver for A itself."""
    key = id(op)
    cached = _solver_cache.get(key)
    if cached is None or cached.op is not op:
        _solver_cache.clear()
        cached = _solver_cache[key] = SPDSolver(op)
    return cached


def release_solvers() -> None:
    """Drop the cached factorization (and with it the reference to its operator)."""
    _solver_cache.clear()


def solve_dirichlet(op: MixedOperator, rhs) -> LinearSolveResult:
    return operator_solver(op).solve(rhs)


def energy_value(op: MixedOperator, u, rhs) -> float:
    """Discrete energy  1/2 u^T A u h^N - <rhs, u> h^N."""
    u = np.asarray(u, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != u.shape:
        raise ValueError("u and rhs must have the same shape")
    hN = op.grid.cell_volume
    return float(0.5 * u @ apply_operator(op, u) * hN - rhs @ u * hN)


def green_column(op: MixedOperator, y: int) -> np.ndarray:
    """G(., y): solution of A g = e_y / h^N."""
    if not 0 <= y < op.size:
        raise IndexError(f"node {y} is not an interior node")
    e = np.zeros(op.size)
    e[y] = 1.0 / op.grid.cell_volume
    return solve_dirichlet(op, e).u


@dataclass
class EigenPair:
    eigenvalue: float
    eigenfunction: np.ndarray
    iterations: int
    residual: float


def principal_eigenpair(op: MixedOperator, tol: float = 1e-8, maxiter: int = 500) -> EigenPair:
    """Smallest eigenpair of A by inverse power iteration.

    Iterates until the eigenvalue drift is below ``tol`` and the residual
    ``|A phi - lam phi| / (lam |phi|)`` is below ``tol / 10``.  The
    eigenfunction is returned positive with max exactly 1.
    """
    solver = operator_solver(op)
    phi = np.sin(np.pi * np.clip(op.grid.delta / op.grid.diameter, 0.0, 0.5)) + 0.1
    phi /= np.linalg.norm(phi)
    lam_old = np.inf
    for it in range(1, maxiter + 1):
        psi = solver.solve(phi).u
        psi /= np.linalg.norm(psi)
        Apsi = op.apply(psi)
        lam = float(psi @ Apsi)
        res = float(np.linalg.norm(Apsi - lam * psi) / lam)
        phi = psi
        if abs(lam - lam_old) <= tol * lam and res <= 0.1 * tol:
            break
        lam_old = lam
    else:
        raise SolverError(f"inverse iteration did not converge in {maxiter} steps "
                          f"(residual {res:.2e})")
    phi = phi * np.sign(phi.sum())
    phi = phi / phi.max()
    return EigenPair(lam, phi, it, res)


def write_grid_function_csv(path, grid, values, name: str = "value") -> None:
    """CSV with node coordinates, distance to the boundary and the value."""
    coords = [f"x{i + 1}" for i in range(grid.N)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(coords + ["delta", name])
        for xi, d, v in zip(grid.x, grid.delta, values):
            w.writerow([repr(float(c)) for c in xi] + [repr(float(d)), repr(float(v))])
