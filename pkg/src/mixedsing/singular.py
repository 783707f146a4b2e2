"""
Approximation scheme for  A u = f / u^gamma:  regularized data f_n, Newton
solves of the nonsingular problems A u = f_n / (u + 1/n)^gamma, warm-started
continuation in n, and the refinement-ladder nonexistence diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import OrderedDict
import gc
import json
import logging
import math

import numpy as np

from .grid import Grid, GridSpec, build_grid
from .operator import MixedOperator, dirichlet_energy
from .linsolve import SPDSolver, SolverError, release_solvers, solve_dirichlet
from . import analysis

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_SCHEDULE = tuple(2 ** k for k in range(11))
MONOTONICITY_TOL = 1e-10
NEWTON_LINEAR_TOL = 1e-11
HOPF_DRIFT = 0.2
NONEXISTENCE_L = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


class ContinuationError(RuntimeError):
    """A nonlinear solve failed; ``report`` holds the stages completed so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class LebesgueWeight:
    values: np.ndarray
    r: float = math.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("Lebesgue weight must be finite and non-negative")
        if self.r < 1:
            raise ValueError(f"summability exponent must be >= 1, got {self.r}")

    def describe(self) -> dict:
        r = self.r if math.isfinite(self.r) else "inf"
        return {"kind": "lebesgue", "r": r, "max": float(self.values.max())}


@dataclass
class SingularPowerWeight:
    zeta: float

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")

    def describe(self) -> dict:
        return {"kind": "deltapow", "zeta": self.zeta}


WeightSpec = LebesgueWeight | SingularPowerWeight


def regularize_weight(weight: WeightSpec, n: int, gamma: float, grid: Grid,
                      nonexistence: bool = False) -> np.ndarray:
    """The increasing approximations f_n <= f.

    Lebesgue data are truncated at level n.  For f = delta^-zeta the
    distance is shifted by (1/n)^((gamma+1)/(2-zeta)); when zeta >= 2 that
    exponent is meaningless and (``nonexistence=True`` only) the shift is 1/n.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if isinstance(weight, LebesgueWeight):
        if weight.values.shape != (grid.size,):
            raise ValueError("Lebesgue weight does not match the grid")
        return np.minimum(weight.values, float(n))
    zeta = weight.zeta
    if zeta == 0:
        return np.ones(grid.size)
    if gamma <= 0:
        raise ValueError("singular power weights with zeta > 0 need gamma > 0")
    if zeta >= 2:
        if not nonexistence:
            raise ValueError("zeta >= 2 is only accepted by the nonexistence diagnostic")
        shift = 1.0 / n
    else:
        shift = (1.0 / n) ** ((gamma + 1.0) / (2.0 - zeta))
    return (grid.delta + shift) ** (-zeta)


OPERATOR_CACHE_SIZE = 2
_operators: OrderedDict = OrderedDict()


def cached_operator(spec: GridSpec, s: float, storage: str = "auto") -> MixedOperator:
    """Operator for (spec, s), keeping the most recent few assembled.

    Evicted operators are released before a new one is assembled, so at
    most OPERATOR_CACHE_SIZE dense matrices are alive at any time.
    """
    key = (spec, float(s), storage)
    if key in _operators:
        _operators.move_to_end(key)
        return _operators[key]
    while len(_operators) >= OPERATOR_CACHE_SIZE:
        _operators.popitem(last=False)
    release_solvers()
    gc.collect()
    op = _operators[key] = MixedOperator(build_grid(spec), s, storage=storage)
    return op


@dataclass
class SingularProblem:
    gamma: float
    s: float
    grid: Grid
    weight: WeightSpec
    newton_tol: float = 1e-10
    continuation_tol: float = 0.05
    schedule: tuple = DEFAULT_SCHEDULE
    nonexistence: bool = False
    op: MixedOperator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0,1), got {self.s}")
        if isinstance(self.weight, SingularPowerWeight):
            if self.weight.zeta > 0 and self.gamma <= 0:
                raise ValueError("singular power weights require gamma > 0")
        elif self.weight.r == 1 and self.gamma == 0:
            raise ValueError("(r, gamma) = (1, 0) is excluded")
        sched = list(self.schedule)
        if len(sched) < 2 or any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] < 1:
            raise ValueError("n-schedule must be strictly increasing positive integers (>= 2 entries)")
        if self.op is None:
            self.op = cached_operator(self.grid.spec, self.s)
        elif self.op.grid is not self.grid:
            raise ValueError("operator was assembled on a different grid")

    def with_grid(self, grid: Grid) -> "SingularProblem":
        if isinstance(self.weight, LebesgueWeight):
            raise ValueError("a Lebesgue weight is tied to its grid")
        return SingularProblem(self.gamma, self.s, grid, self.weight, self.newton_tol,
                               self.continuation_tol, self.schedule, self.nonexistence)

    def f_n(self, n: int) -> np.ndarray:
        return regularize_weight(self.weight, n, self.gamma, self.grid, self.nonexistence)


@dataclass
class RegularizedSolve:
    n: int
    u: np.ndarray = field(repr=False)
    iterations: int
    residual: float
    min_u: float
    method: str
    linear_iterations: int = 0


def _residual(op, u, fn, gamma, n):
    return op.apply(u) - fn / (u + 1.0 / n) ** gamma


def solve_regularized(problem: SingularProblem, n: int, u_init=None,
                      maxiter: int = 50, picard_maxiter: int = 500) -> RegularizedSolve:
    """Solve A u = f_n/(u + 1/n)^gamma by damped Newton, Picard as fallback.

    The Jacobian A + diag(gamma f_n (u+1/n)^-(gamma+1)) is SPD because the
    nonlinearity is decreasing in u.
    """
    op, gamma = problem.op, problem.gamma
    fn = problem.f_n(n)
    scale = float(np.max(np.abs(fn)))
    target = problem.newton_tol * scale
    lin_its = 0
    if u_init is None or gamma == 0:
        first = solve_dirichlet(op, fn)
        u, lin_its = first.u, first.iterations
    else:
        u = np.asarray(u_init, dtype=np.float64)
        if u.shape != (op.size,) or np.any(u < 0):
            raise ValueError("initial iterate must be a non-negative grid function")
        u = u.copy()
    F = _residual(op, u, fn, gamma, n)
    res = float(np.max(np.abs(F)))
    it = 0
    stalled = False
    while res > target and it < maxiter:
        it += 1
        w = u + 1.0 / n
        jac = SPDSolver(op, gamma * fn / w ** (gamma + 1.0), tol=NEWTON_LINEAR_TOL)
        step = jac.solve(-F)
        lin_its += step.iterations
        du = step.u
        t, norm0 = 1.0, np.linalg.norm(F)
        while True:
            cand = u + t * du
            if np.all(cand + 1.0 / n > 0):
                Fc = _residual(op, cand, fn, gamma, n)
                if np.linalg.norm(Fc) <= (1.0 - 1e-4 * t) * norm0:
                    break
            t *= 0.5
            if t < 1e-10:
                stalled = True
                break
        if stalled:
            break
        u, F = cand, Fc
        res = float(np.max(np.abs(F)))
    method = "newton" if gamma > 0 else "linear"
    if res > target:
        logger.info("Newton stalled at n=%d (residual %.3e); switching to Picard", n, res)
        method = "picard"
        u = np.maximum(u, 0.0)
        for k in range(1, picard_maxiter + 1):
            nxt = solve_dirichlet(op, fn / (u + 1.0 / n) ** gamma)
            lin_its += nxt.iterations
            u = 0.5 * (u + nxt.u)
            F = _residual(op, u, fn, gamma, n)
            res = float(np.max(np.abs(F)))
            if res <= target:
                break
        it += k
        if res > target:
            raise SolverError(f"n={n}: Newton and Picard failed (residual {res:.3e}, target {target:.3e})")
    min_u = float(u.min())
    if min_u <= 0:
        raise SolverError(f"n={n}: solution lost positivity (min {min_u:.3e})")
    return RegularizedSolve(n, u, max(it, 1), res / scale, min_u, method, lin_its)


@dataclass
class SolutionReport:
    problem: dict
    stages: list
    u: np.ndarray = field(repr=False)
    flag: str
    monotonicity_margin: float
    hopf_constant: float
    hopf_drift: float
    fit: dict | None
    fit_delta: dict | None
    norms: dict
    nonexistence: dict | None = None

    def to_json(self) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "problem": self.problem,
            "flag": self.flag,
            "stages": self.stages,
            "monotonicity_margin": self.monotonicity_margin,
            "hopf_constant": self.hopf_constant,
            "hopf_drift": self.hopf_drift,
            "exponent_fit": {"torsion": self.fit, "delta": self.fit_delta},
            "norms": self.norms,
        }
        if self.nonexistence is not None:
            payload["nonexistence"] = self.nonexistence
        return json.dumps(payload, indent=2, sort_keys=True)


def _fit_mode(problem: SingularProblem) -> str:
    w = problem.weight
    if isinstance(w, SingularPowerWeight) and abs(w.zeta + problem.gamma - 1.0) < 1e-12:
        return "log-corrected"
    return "power"


def _problem_dict(problem: SingularProblem) -> dict:
    g = problem.grid
    return {"N": g.N, "shape": g.shape, "m": g.m, "h": g.h, "s": problem.s,
            "gamma": problem.gamma, "weight": problem.weight.describe(),
            "schedule": list(problem.schedule), "newton_tol": problem.newton_tol,
            "continuation_tol": problem.continuation_tol}


def _build_report(problem, stages, u, flag) -> SolutionReport:
    grid, op = problem.grid, problem.op
    margins = [st["monotonicity_margin"] for st in stages[1:]]
    hopf = [st["hopf_margin"] for st in stages]
    fit = fit_delta = None
    if flag != "FAILED" and u is not None:
        mode = _fit_mode(problem)
        try:
            fit_delta = analysis.fit_boundary_exponent(u, grid, mode).as_dict()
            ref = analysis.torsion_function(op)
            fit = analysis.fit_boundary_exponent(u, grid, mode, reference=ref).as_dict()
        except ValueError as exc:
            logger.info("boundary fit skipped: %s", exc)
    norms = {}
    if u is not None:
        norms = {"L1": analysis.lebesgue_norm(u, 1, grid),
                 "L2": analysis.lebesgue_norm(u, 2, grid),
                 "Linf": analysis.lebesgue_norm(u, math.inf, grid),
                 "dirichlet": dirichlet_energy(grid, u),
                 "gagliardo": analysis.gagliardo_seminorm(u, op)}
    return SolutionReport(
        problem=_problem_dict(problem), stages=stages, u=u, flag=flag,
        monotonicity_margin=min(margins) if margins else math.inf,
        hopf_constant=min(hopf) if hopf else math.nan,
        hopf_drift=max(0.0, 1.0 - min(hopf) / hopf[0]) if hopf else math.nan,
        fit=fit, fit_delta=fit_delta, norms=norms)


def continuation_solve(problem: SingularProblem) -> SolutionReport:
    """Solve (P_n) along the n-schedule, warm-starting each stage.

    Flags CONVERGED when the last relative sup-change is below the
    continuation tolerance and the changes are decreasing; DIVERGING
    otherwise.  A monotonicity violation beyond 1e-10 or an inner failure
    raises ContinuationError carrying the partial report.
    """
    grid = problem.grid
    stages, u, prev = [], None, None
    for n in problem.schedule:
        try:
            sol = solve_regularized(problem, n, prev)
        except SolverError as exc:
            report = _build_report(problem, stages, prev, "FAILED")
            raise ContinuationError(str(exc), report) from exc
        u = sol.u
        stage = {"n": int(n), "newton_iterations": sol.iterations, "method": sol.method,
                 "linear_iterations": sol.linear_iterations, "residual": sol.residual,
                 "min_u": sol.min_u, "hopf_margin": float(np.min(u / grid.delta)),
                 "sup_u": float(u.max())}
        if prev is not None:
            diff = u - prev
            stage["sup_diff"] = float(np.max(np.abs(diff)))
            stage["rel_sup_diff"] = stage["sup_diff"] / stage["sup_u"]
            stage["monotonicity_margin"] = float(diff.min())
        stages.append(stage)
        if prev is not None and stage["monotonicity_margin"] < -MONOTONICITY_TOL:
            report = _build_report(problem, stages, u, "FAILED")
            raise ContinuationError(
                f"monotonicity violated at n={n}: margin {stage['monotonicity_margin']:.3e}", report)
        prev = u
    rel = [st["rel_sup_diff"] for st in stages[1:]]
    decreasing = len(rel) < 2 or rel[-1] <= rel[-2]
    flag = "CONVERGED" if rel[-1] <= problem.continuation_tol and decreasing else "DIVERGING"
    return _build_report(problem, stages, u, flag)


def detect_nonexistence(problem: SingularProblem, ladder=None,
                        L_values=NONEXISTENCE_L) -> SolutionReport:
    """Refinement-ladder test for the absence of a finite-energy solution.

    Runs the continuation on (m, 2m+1, 4m+3) and declares NONEXISTENT when
    ||grad_h u^{(L+1)/2}||^2 grows by >= 1.2 per refinement for every L
    scanned; otherwise the finest run's own flag is kept.
    """
    if not isinstance(problem.weight, SingularPowerWeight) or problem.gamma <= 0:
        raise ValueError("the nonexistence diagnostic needs delta^-zeta data and gamma > 0")
    m = problem.grid.m
    if ladder is None:
        ladder = (m, 2 * m + 1, 4 * m + 3)
    runs = []
    for mm in ladder:
        spec = GridSpec(problem.grid.N, problem.grid.shape, mm)
        grid = problem.grid if mm == m else build_grid(spec)
        p = SingularProblem(problem.gamma, problem.s, grid, problem.weight, problem.newton_tol,
                            problem.continuation_tol, problem.schedule,
                            nonexistence=problem.weight.zeta >= 2)
        runs.append((p, continuation_solve(p)))
    scan = []
    for L in L_values:
        alpha = (L + 1.0) / 2.0
        norms = [analysis.h1_power_norm(rep.u, alpha, p.grid) for p, rep in runs]
        ratios = [b / a for a, b in zip(norms[:-1], norms[1:])]
        scan.append({"L": L, "norms": norms, "ratios": ratios,
                     "diverging": bool(all(q >= analysis.DIVERGENCE_FACTOR for q in ratios))})
    report = runs[-1][1]
    if all(e["diverging"] for e in scan):
        report.flag = "NONEXISTENT"
    report.nonexistence = {"ladder": list(ladder), "scan": scan,
                           "flags": [rep.flag for _, rep in runs]}
    return report
