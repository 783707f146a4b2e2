"""
Quantitative checks: exponent formulas, boundary-exponent fits, discrete
norms, threshold scans, Green-operator actions and the continuity gap.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
import math

import numpy as np
from scipy import optimize, stats

from .grid import Grid
from .operator import MixedOperator, dirichlet_energy
from .linsolve import green_column, solve_dirichlet

EXP_CAP = 700.0
DIVERGENCE_FACTOR = 1.2
STABILITY_BAND = 0.10


# ---------------------------------------------------------------- formulas

@dataclass
class ExponentTable:
    N: int
    gamma: float
    r: float | None = None
    zeta: float | None = None
    q: float | None = None
    critical_sobolev: float | None = None
    r_sharp: float | None = None
    S_r: float | None = None
    sigma_r: float | None = None
    lower_sobolev: float | None = None
    L_star: float | None = None
    sobolev_threshold: float | None = None
    kappa: float | None = None
    beta: float | None = None
    boundary_exponent: float | None = None
    regimes: dict | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def lines(self) -> list[str]:
        out = []
        for key, value in self.as_dict().items():
            if key == "regimes" or value is None:
                continue
            out.append(f"{key} = {value:.12g}" if isinstance(value, float) else f"{key} = {value}")
        for key, value in (self.regimes or {}).items():
            out.append(f"regime.{key} = {value}")
        return out


def _conjugate(p: float) -> float:
    if p == math.inf:
        return 1.0
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)


def exponent_table(N: int, r: float | None = None, gamma: float = 0.0,
                   zeta: float | None = None) -> ExponentTable:
    """Evaluate the summability / regularity / boundary exponents.

    Lebesgue data use ``r`` (``math.inf`` allowed); singular power data use
    ``zeta``.  Regime flags are collected in ``regimes``.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    table = ExponentTable(N=N, gamma=gamma, r=r, zeta=zeta, regimes={})
    reg = table.regimes
    table.critical_sobolev = 2.0 * N / (N - 2) if N > 2 else math.inf
    if r is not None:
        if r < 1:
            raise ValueError(f"summability r must be >= 1, got {r}")
        if r == 1 and gamma == 0:
            raise ValueError("(r, gamma) = (1, 0) is excluded")
        if gamma < 1:
            table.r_sharp = _conjugate(table.critical_sobolev / (1.0 - gamma))
        if r != math.inf:
            denom_q = N - r * (1.0 - gamma)
            if denom_q > 0:
                table.q = N * r * (1.0 + gamma) / denom_q
            table.lower_sobolev = gamma - 1.0 + 1.0 / r
            if N > 2 and 2 * r != N:
                table.S_r = (N * (r - 1.0) + gamma * r * (N - 2.0)) / (N - 2.0 * r)
                table.sigma_r = N * r * (1.0 + gamma) / (N - 2.0 * r)
        else:
            table.lower_sobolev = gamma - 1.0
        half = N / 2.0
        reg["summability"] = ("limit" if r == half else "weak" if r < half else "strong")
        if table.r_sharp is not None:
            reg["below_r_sharp"] = bool(r < table.r_sharp)
        reg["gamma_plus_1_over_r_below_1"] = bool(gamma + (0.0 if r == math.inf else 1.0 / r) < 1.0)
    if zeta is not None:
        if zeta < 0:
            raise ValueError(f"zeta must be >= 0, got {zeta}")
        s = zeta + gamma
        reg["zeta_plus_gamma"] = "<1" if s < 1 else "=1" if s == 1 else ">1"
        if zeta >= 2:
            reg["nonexistence"] = True
        else:
            table.L_star = (gamma + zeta - 1.0) / (2.0 - zeta)
            table.sobolev_threshold = table.L_star if s > 1 else 0.0
            table.kappa = (2.0 - zeta) / (gamma + 1.0)
            table.beta = (2.0 * gamma + zeta) / (gamma + 1.0)
            # exponent of delta (of the log factor when zeta + gamma = 1)
            table.boundary_exponent = (table.kappa if s > 1 else 1.0 if s < 1
                                       else 1.0 / (2.0 - zeta))
            reg["nonexistence"] = False
            reg["finite_energy"] = bool(s <= 1 or table.L_star < 1)
    return table


# ------------------------------------------------------- boundary exponents

@dataclass
class ExponentFit:
    exponent: float
    stderr: float
    window: tuple
    r2: float
    mode: str
    points: int
    reference: str

    @property
    def reliable(self) -> bool:
        return self.r2 >= 0.98

    def as_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["reliable"] = self.reliable
        return d


def default_window(grid: Grid) -> tuple:
    return (5.0 * grid.h, 0.2 * grid.diameter)


def torsion_function(op: MixedOperator) -> np.ndarray:
    """w = A^{-1} 1; two-sided comparable to delta by the Hopf bound."""
    return solve_dirichlet(op, np.ones(op.size)).u


def fit_boundary_exponent(u, grid: Grid, mode: str = "power", window=None,
                          reference=None) -> ExponentFit:
    """Fit the boundary exponent of ``u`` along the inward midline ray.

    power:          slope of log u against log d
    log-corrected:  slope of log(u/d) against log ln(diam/delta)

    ``d`` is delta itself, or ``reference`` (a grid function comparable to
    delta, e.g. the torsion function) when given.
    """
    if mode not in ("power", "log-corrected"):
        raise ValueError(f"unknown fit mode {mode!r}")
    lo, hi = default_window(grid) if window is None else window
    if lo < 3.0 * grid.h - 1e-12 or hi > grid.diameter / 4 + 1e-12 or lo >= hi:
        raise ValueError(f"fit window [{lo}, {hi}] must lie inside [3h, diam/4]")
    ray = grid.midline_ray()
    delta = grid.delta[ray]
    sel = (delta >= lo - 1e-12) & (delta <= hi + 1e-12)
    if sel.sum() < 8:
        raise ValueError(f"only {sel.sum()} ray points in window [{lo:.4g}, {hi:.4g}]; need 8")
    u = np.asarray(u, dtype=np.float64)[ray][sel]
    if np.any(u <= 0):
        raise ValueError("u must be positive on the fit ray")
    dist = delta[sel] if reference is None else np.asarray(reference)[ray][sel]
    if mode == "power":
        x, y = np.log(dist), np.log(u)
    else:
        x, y = np.log(np.log(grid.diameter / delta[sel])), np.log(u / dist)
    res = stats.linregress(x, y)
    return ExponentFit(exponent=float(res.slope), stderr=float(res.stderr),
                       window=(float(lo), float(hi)), r2=float(res.rvalue ** 2), mode=mode,
                       points=int(sel.sum()),
                       reference="delta" if reference is None else "reference")


# ------------------------------------------------------------------- norms

def h1_power_norm(u, alpha: float, grid: Grid) -> float:
    """sum |grad_h (u^alpha)|^2 h^N (forward differences, zero outside)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("u must be non-negative")
    return dirichlet_energy(grid, u ** alpha)


def gagliardo_seminorm(u, op: MixedOperator) -> float:
    """(C/2) double integral of |u(x)-u(y)|^2/|x-y|^{N+2s}, as u^T A_frac u h^N."""
    u = np.asarray(u, dtype=np.float64)
    return float(u @ op.apply_fractional(u) * op.grid.cell_volume)


def gagliardo_double_sum(u, op: MixedOperator) -> float:
    """The same energy written as an explicit pair sum plus the exterior term."""
    u = np.asarray(u, dtype=np.float64)
    frac, hN = op.frac, op.grid.cell_volume
    total = 0.0
    for rows in frac.row_blocks():
        W = frac.weight_block(rows)
        total += 0.5 * float(np.sum(W * (u[rows, None] - u[None, :]) ** 2))
    total += float(np.sum(frac.tail * u * u))
    return total * hN


def lebesgue_norm(u, p: float, grid: Grid) -> float:
    """Discrete L^p norm (sum |u|^p h^N)^(1/p); the max for p = inf."""
    u = np.abs(np.asarray(u, dtype=np.float64))
    if p == math.inf:
        return float(u.max())
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(np.sum(u ** p) * grid.cell_volume) ** (1.0 / p)


@dataclass
class ExpMoment:
    value: float
    capped: bool


def exp_moment(u, beta: float, grid: Grid) -> ExpMoment:
    """sum exp(beta N u / (N-2)) h^N, with exponents capped at EXP_CAP."""
    N = grid.N
    if N <= 2:
        raise ValueError("the exponential moment needs N > 2")
    z = beta * N * np.asarray(u, dtype=np.float64) / (N - 2)
    capped = bool(np.any(z > EXP_CAP))
    return ExpMoment(float(np.sum(np.exp(np.minimum(z, EXP_CAP))) * grid.cell_volume), capped)


def admissible_beta(gamma: float, f_norm: float, sobolev_constant: float) -> float:
    """Largest beta with beta*max(1, (beta/gamma)^gamma) <= 2/(S ||f||_{N/2})."""
    if not 0 <= gamma <= 1:
        raise ValueError("the exponential bound covers 0 <= gamma <= 1")
    bound = 2.0 / (sobolev_constant * f_norm)
    if gamma == 0:
        return bound

    def g(b):
        return b * max(1.0, (b / gamma) ** gamma) - bound

    hi = bound
    while g(hi) < 0:
        hi *= 2
    return optimize.brentq(g, 0.0, hi, xtol=1e-14)


def sobolev_constant(grid: Grid, trials: int = 50, steps: int = 200, seed: int = 0) -> float:
    """Estimate S(N) in ||u||_{2N/(N-2)} <= S ||grad u||_2 on the grid.

    Minimises the quotient ||grad_h u|| / ||u||_{2*} by projected gradient
    from random positive starts (projection onto u >= 0) and returns the
    reciprocal of the best quotient found.
    """
    if grid.N <= 2:
        raise ValueError("the Sobolev exponent 2N/(N-2) needs N > 2")
    p = 2.0 * grid.N / (grid.N - 2)
    hN = grid.cell_volume
    from .operator import assemble_local
    L = assemble_local(grid)  # u^T L u h^N is the discrete Dirichlet energy
    rng = np.random.default_rng(seed)

    def quotient(v):
        return math.sqrt(v @ (L @ v) * hN) / (np.sum(np.abs(v) ** p) * hN) ** (1.0 / p)

    best = math.inf
    for _ in range(trials):
        v = rng.random(grid.size) * grid.delta
        v /= math.sqrt(v @ (L @ v) * hN)
        q = quotient(v)
        step = 0.5
        for _ in range(steps):
            # ascent on ||v||_p^p over the sphere ||grad v|| = 1 (v >= 0)
            g = p * v ** (p - 1) * hN
            cand = np.maximum(v + step * g / np.linalg.norm(g) * np.linalg.norm(v), 0.0)
            nrm = cand @ (L @ cand) * hN
            if nrm <= 0:
                step *= 0.5
                continue
            cand /= math.sqrt(nrm)
            qc = quotient(cand)
            if qc < q:
                v, q = cand, qc
                step = min(step * 1.5, 1.0)
            else:
                step *= 0.5
                if step < 1e-6:
                    break
        best = min(best, q)
    return 1.0 / best


# ------------------------------------------------------------ threshold scan

def classify_growth(values) -> str:
    """DIVERGENT if every refinement ratio >= 1.2, BOUNDED if every change < 10%."""
    values = np.asarray(values, dtype=np.float64)
    ratios = values[1:] / values[:-1]
    if np.all(ratios >= DIVERGENCE_FACTOR):
        return "DIVERGENT"
    if np.all(np.abs(ratios - 1.0) < STABILITY_BAND):
        return "BOUNDED"
    return "INCONCLUSIVE"


@dataclass
class ScanEntry:
    L: float
    alpha: float
    norms: list
    ratios: list
    classification: str


def sobolev_threshold_scan(make_problem, L_values, m_ladder) -> list[ScanEntry]:
    """Classify u^{(L+1)/2} in H_0^1 by watching its discrete norm under refinement.

    ``make_problem(m)`` returns the SingularProblem on the grid of resolution m.
    """
    from .singular import continuation_solve, ContinuationError

    if len(m_ladder) < 3:
        raise ValueError("the scan needs at least three resolutions")
    solutions = []
    for m in m_ladder:
        problem = make_problem(m)
        report = continuation_solve(problem)
        if report.flag != "CONVERGED":
            raise ContinuationError(f"base solve at m={m} ended with flag {report.flag}")
        solutions.append((problem.grid, report.u))
    entries = []
    for L in L_values:
        alpha = (L + 1.0) / 2.0
        norms = [h1_power_norm(u, alpha, g) for g, u in solutions]
        ratios = [b / a for a, b in zip(norms[:-1], norms[1:])]
        entries.append(ScanEntry(L, alpha, norms, ratios, classify_growth(norms)))
    return entries


def hardy_profile_norms(kappa: float, L: float, m_ladder, N: int = 2) -> list[float]:
    """h1_power_norm of the synthetic profile delta^kappa on a box ladder."""
    from .grid import GridSpec, build_grid
    out = []
    for m in m_ladder:
        g = build_grid(GridSpec(N, "box", m))
        out.append(h1_power_norm(g.delta ** kappa, (L + 1.0) / 2.0, g))
    return out


# ----------------------------------------------------------- Green actions

def green_profile(delta, diameter: float, kind: str, param: float) -> np.ndarray:
    """Predicted boundary profile of G[delta^-beta] or G[delta^-1 ln^-Xi(diam/delta)]."""
    ell = np.log(diameter / delta)
    if kind == "power":
        if param < 1:
            return delta
        if param == 1:
            return delta * ell
        return delta ** (2.0 - param)
    if kind == "log":
        return delta * ell ** (1.0 - param)
    raise ValueError(f"unknown kind {kind!r}")


@dataclass
class RatioStats:
    min: float
    max: float
    spread: float
    count: int

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio_stats(ratio) -> RatioStats:
    ratio = np.asarray(ratio)
    return RatioStats(float(ratio.min()), float(ratio.max()),
                      float(ratio.max() / ratio.min()), int(ratio.size))


def green_distance_action(op: MixedOperator, kind: str, param: float, margin: float = 3.0):
    """Solve A v = weight and compare v with the predicted profile where delta >= margin*h.

    kind="power": weight delta^-beta (beta = param < 2);
    kind="log":   weight delta^-1 ln^-Xi(diam/delta) (Xi = param in (0,1)).
    Returns (v, RatioStats).
    """
    grid = op.grid
    if grid.N != 3:
        raise ValueError("the distance-action estimates are checked for N = 3")
    delta, D = grid.delta, grid.diameter
    if kind == "power":
        if param >= 2:
            raise ValueError("beta >= 2 is outside the admissible range")
        weight = delta ** (-param)
    elif kind == "log":
        if not 0 < param < 1:
            raise ValueError("Xi must lie in (0,1)")
        weight = 1.0 / (delta * np.log(D / delta) ** param)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    v = solve_dirichlet(op, weight).u
    keep = delta >= margin * grid.h
    ratio = v[keep] / green_profile(delta[keep], D, kind, param)
    return v, _ratio_stats(ratio)


def kernel_estimate(x, y, delta_x, delta_y, N: int) -> np.ndarray:
    """|x-y|^{2-N} min(1, delta(x) delta(y) / |x-y|^2)."""
    r = np.linalg.norm(np.atleast_2d(x) - np.atleast_2d(y), axis=-1)
    return r ** (2.0 - N) * np.minimum(1.0, delta_x * delta_y / r ** 2)


@dataclass
class GreenKernelCheck:
    sources: list
    ratio: RatioStats
    symmetry_error: float
    max_green: float


def green_kernel_check(op: MixedOperator, sources, margin: float = 2.0) -> GreenKernelCheck:
    """Compare Green columns with the two-sided kernel estimate (nodes with delta >= margin*h)."""
    grid = op.grid
    if grid.N < 3:
        raise ValueError("the kernel estimate is stated for N >= 3")
    keep = grid.delta >= margin * grid.h
    columns = {}
    ratios = []
    for y in sources:
        if not keep[y]:
            raise ValueError(f"source {y} is too close to the boundary")
        G = green_column(op, y)
        columns[y] = G
        mask = keep.copy()
        mask[y] = False
        est = kernel_estimate(grid.x[mask], grid.x[y], grid.delta[mask], grid.delta[y], grid.N)
        ratios.append(G[mask] / est)
    sym = 0.0
    for a in sources:
        for b in sources:
            sym = max(sym, abs(columns[a][b] - columns[b][a]))
    gmax = max(float(c.max()) for c in columns.values())
    return GreenKernelCheck(list(map(int, sources)), _ratio_stats(np.concatenate(ratios)),
                            float(sym), gmax)


def hopf_ratio(op: MixedOperator, f) -> float:
    """min_y G[f](y) / (delta(y) * sum delta f h^N); positive by the Hopf bound."""
    f = np.asarray(f, dtype=np.float64)
    v = solve_dirichlet(op, f).u
    mass = float(np.sum(op.grid.delta * f) * op.grid.cell_volume)
    return float(np.min(v / op.grid.delta) / mass)


# ------------------------------------------------------------ continuity

def continuity_gap(u, v, f, g, r: float, S: float, grid: Grid, gamma: float):
    """Return (||grad |u-v|^{(S+1)/2}||^2, ||f-g||_r^{r(N-2)/(N-2r)})."""
    N = grid.N
    if not (1 <= r < N / 2):
        raise ValueError(f"continuity estimate needs 1 <= r < N/2, got r={r}")
    S_r = exponent_table(N, r=r, gamma=gamma).S_r
    if not (gamma - 1e-12 <= S <= S_r + 1e-12):
        raise ValueError(f"S must lie in [gamma, S_r] = [{gamma}, {S_r}], got {S}")
    lhs = h1_power_norm(np.abs(np.asarray(u) - np.asarray(v)), (S + 1.0) / 2.0, grid)
    rhs = lebesgue_norm(np.asarray(f) - np.asarray(g), r, grid) ** (r * (N - 2.0) / (N - 2.0 * r))
    return lhs, rhs
