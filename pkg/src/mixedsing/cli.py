"""
Command-line driver: ``mixedsing {solve,sweep,green,eigen,verify,formulas}``.

Parameters may come from a JSON config file (``--config``); flags given on
the command line override it.  Exit codes: 0 success, 1 verification
failure, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, field
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis
from .grid import GridSpec
from .linsolve import SolverError, green_column, principal_eigenpair, write_grid_function_csv
from .singular import (SCHEMA_VERSION, ContinuationError, LebesgueWeight, SingularPowerWeight,
                       SingularProblem, cached_operator, continuation_solve, detect_nonexistence)

THREADS_ENV = "MIXEDSING_THREADS"

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

SUBCOMMANDS = ("solve", "sweep", "green", "eigen", "verify", "formulas")

DEFAULTS = {
    "N": 2, "shape": "box", "m": "31", "s": "0.5", "gamma": "1.0", "zeta": None, "r": None,
    "weight": None, "schedule": None, "ladder": None, "out": ".", "seed": 0,
    "continuation_tol": 0.05, "sources": 5, "quick": False,
}

SWEEP_COLUMNS = ["N", "m", "s", "gamma", "zeta_or_r", "kappa_pred", "kappa_fit", "stderr", "r2", "flag"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    subcommand: str
    N: int = 2
    shape: str = "box"
    m: list = field(default_factory=lambda: [31])
    s: list = field(default_factory=lambda: [0.5])
    gamma: list = field(default_factory=lambda: [1.0])
    zeta: list | None = None
    r: float | None = None
    weight: str | None = None
    schedule: tuple | None = None
    ladder: tuple | None = None
    out: Path = Path(".")
    seed: int = 0
    continuation_tol: float = 0.05
    sources: int = 5
    quick: bool = False


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# ------------------------------------------------------------------ parsing

def _number_list(value, kind, name):
    if value is None:
        return None
    items = value if isinstance(value, (list, tuple)) else str(value).split(",")
    try:
        return [kind(x) for x in items if str(x).strip() != ""]
    except ValueError:
        raise ConfigError(f"--{name}: cannot parse {value!r}") from None


def parse_weight(text: str, grid, r: float | None):
    """Turn ``const:v``, ``deltapow:zeta`` or ``file:path`` into a weight."""
    kind, sep, arg = text.partition(":")
    if not sep or not arg:
        raise ConfigError(f"weight {text!r} must look like const:<v>, deltapow:<zeta> or file:<path>")
    if kind == "const":
        v = float(arg)
        if v < 0:
            raise ConfigError("constant weight must be non-negative")
        return LebesgueWeight(np.full(grid.size, v), math.inf if r is None else r)
    if kind == "deltapow":
        return SingularPowerWeight(float(arg))
    if kind == "file":
        return LebesgueWeight(read_grid_function(arg, grid), math.inf if r is None else r)
    raise ConfigError(f"unknown weight kind {kind!r}")


def read_grid_function(path, grid) -> np.ndarray:
    """Plain-text grid function: header ``N,m`` then one value per line."""
    try:
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read weight file: {exc}") from None
    if not lines:
        raise ConfigError(f"weight file {path} is empty")
    try:
        N, m = (int(t) for t in lines[0].replace(",", " ").split())
        values = np.array([float(t) for t in lines[1:]])
    except ValueError:
        raise ConfigError(f"weight file {path}: malformed header or value") from None
    if (N, m) != (grid.N, grid.m) or values.size != grid.size:
        raise ConfigError(f"weight file {path} is for N={N}, m={m} with {values.size} values; "
                          f"the grid has N={grid.N}, m={grid.m} with {grid.size} nodes")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedsing", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    S = argparse.SUPPRESS
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=S, help="JSON file with parameter defaults")
        p.add_argument("--N", type=int, default=S, help="dimension (2 or 3)")
        p.add_argument("--shape", choices=("box", "ball"), default=S)
        p.add_argument("--m", default=S, help="nodes per axis (comma list for sweep)")
        p.add_argument("--s", default=S, help="fractional order (comma list for sweep)")
        p.add_argument("--gamma", default=S, help="singular exponent (comma list for sweep)")
        p.add_argument("--zeta", default=S, help="datum is delta^-zeta (comma list for sweep)")
        p.add_argument("--r", type=float, default=S, help="summability exponent of the datum")
        p.add_argument("--weight", default=S, help="const:<v> | deltapow:<zeta> | file:<path>")
        p.add_argument("--schedule", default=S, help="comma list of n values")
        p.add_argument("--ladder", default=S, help="comma list of m values (nonexistence test)")
        p.add_argument("--continuation-tol", dest="continuation_tol", type=float, default=S)
        p.add_argument("--sources", type=int, default=S, help="number of Green sources")
        p.add_argument("--out", default=S, help="output directory")
        p.add_argument("--seed", type=int, default=S)
        if name == "verify":
            p.add_argument("--quick", action="store_true", default=S,
                           help="reduced resolutions for a fast end-to-end pass")
    return parser


def load_config(argv=None) -> tuple[RunConfig, bool]:
    args = vars(build_parser().parse_args(argv))
    verbose = args.pop("verbose")
    subcommand = args.pop("subcommand")
    merged = dict(DEFAULTS)
    if "config" in args:
        path = args.pop("config")
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from None
        unknown = set(data) - set(DEFAULTS)
        if not isinstance(data, dict) or unknown:
            raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
        merged.update(data)
    merged.update(args)
    schedule = _number_list(merged["schedule"], int, "schedule")
    ladder = _number_list(merged["ladder"], int, "ladder")
    cfg = RunConfig(
        subcommand=subcommand, N=int(merged["N"]), shape=merged["shape"],
        m=_number_list(merged["m"], int, "m"), s=_number_list(merged["s"], float, "s"),
        gamma=_number_list(merged["gamma"], float, "gamma"),
        zeta=_number_list(merged["zeta"], float, "zeta"),
        r=None if merged["r"] is None else float(merged["r"]), weight=merged["weight"],
        schedule=tuple(schedule) if schedule else None, ladder=tuple(ladder) if ladder else None,
        out=Path(merged["out"]), seed=int(merged["seed"]),
        continuation_tol=float(merged["continuation_tol"]), sources=int(merged["sources"]),
        quick=bool(merged["quick"]))
    validate(cfg)
    return cfg, verbose


def validate(cfg: RunConfig) -> None:
    """Check every parameter against the admissible regimes before heavy work."""
    if cfg.N not in (2, 3):
        raise ConfigError(f"N must be 2 or 3, got {cfg.N}")
    if not cfg.m or not cfg.s or not cfg.gamma:
        raise ConfigError("m, s and gamma need at least one value")
    if cfg.subcommand != "sweep" and (len(cfg.m) > 1 or len(cfg.s) > 1 or len(cfg.gamma) > 1
                                      or (cfg.zeta and len(cfg.zeta) > 1)):
        raise ConfigError("lists of values are only accepted by sweep")
    for s in cfg.s:
        if not 0 < s < 1:
            raise ConfigError(f"s must lie in (0,1), got {s}")
    for g in cfg.gamma:
        if g < 0:
            raise ConfigError(f"gamma must be >= 0, got {g}")
    for m in cfg.m + list(cfg.ladder or ()):
        try:
            GridSpec(cfg.N, cfg.shape, m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.zeta is not None and cfg.weight is not None:
        raise ConfigError("give either --zeta or --weight, not both")
    if cfg.r is not None:
        if cfg.r < 1:
            raise ConfigError(f"r must be >= 1, got {cfg.r}")
        if cfg.r == 1 and 0.0 in cfg.gamma:
            raise ConfigError("(r,gamma)=(1,0) excluded: no existence theory for L^1 data without "
                              "a singular term")
    for z in cfg.zeta or ():
        if z < 0:
            raise ConfigError(f"zeta must be >= 0, got {z}")
        if z > 0 and 0.0 in cfg.gamma:
            raise ConfigError("delta^-zeta data with zeta > 0 need gamma > 0")
    if cfg.schedule is not None:
        if len(cfg.schedule) < 2 or cfg.schedule[0] < 1 or any(
                b <= a for a, b in zip(cfg.schedule, cfg.schedule[1:])):
            raise ConfigError("schedule must be strictly increasing positive integers (>= 2 entries)")
    if cfg.continuation_tol <= 0:
        raise ConfigError("continuation tolerance must be positive")
    if cfg.sources < 1:
        raise ConfigError("need at least one Green source")


# ------------------------------------------------------------- subcommands

def _weight_text(cfg: RunConfig, zeta=None) -> str:
    if cfg.weight is not None:
        return cfg.weight
    if zeta is not None:
        return f"deltapow:{zeta!r}"
    return "const:1"


def make_problem(cfg: RunConfig, m: int, s: float, gamma: float, weight_text: str) -> SingularProblem:
    grid = cached_operator(GridSpec(cfg.N, cfg.shape, m), s).grid
    weight = parse_weight(weight_text, grid, cfg.r)
    extra = {}
    if cfg.schedule is not None:
        extra["schedule"] = cfg.schedule
    nonexistence = isinstance(weight, SingularPowerWeight) and weight.zeta >= 2
    try:
        return SingularProblem(gamma, s, grid, weight, continuation_tol=cfg.continuation_tol,
                               nonexistence=nonexistence, **extra)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_solve(cfg: RunConfig) -> int:
    zeta = cfg.zeta[0] if cfg.zeta else None
    problem = make_problem(cfg, cfg.m[0], cfg.s[0], cfg.gamma[0], _weight_text(cfg, zeta))
    cfg.out.mkdir(parents=True, exist_ok=True)
    if problem.nonexistence or cfg.ladder is not None:
        report = detect_nonexistence(problem, ladder=cfg.ladder)
    else:
        report = continuation_solve(problem)
    (cfg.out / "report.json").write_text(report.to_json() + "\n")
    grid = problem.grid
    ray = grid.midline_ray()
    with open(cfg.out / "profile.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "u"])
        for j in ray:
            w.writerow([repr(float(grid.delta[j])), repr(float(report.u[j]))])
    print(f"flag={report.flag} sup_u={report.u.max():.6g} -> {cfg.out}")
    return EXIT_OK


def _sweep_entry(task):
    cfg, m, s, gamma, zeta, threads = task
    with threadpool_limits(threads):
        problem = make_problem(cfg, m, s, gamma, _weight_text(cfg, zeta))
        label = zeta if zeta is not None else (cfg.r if cfg.r is not None else math.inf)
        pred = math.nan
        if zeta is not None:
            table = analysis.exponent_table(cfg.N, gamma=gamma, zeta=zeta)
            if table.boundary_exponent is not None:
                pred = table.boundary_exponent
        try:
            report = continuation_solve(problem)
            fit, flag = report.fit, report.flag
        except (SolverError, ContinuationError) as exc:
            logging.getLogger(__name__).warning("sweep entry failed: %s", exc)
            fit, flag = None, "FAILED"
    fit = fit or {"exponent": math.nan, "stderr": math.nan, "r2": math.nan}
    return [cfg.N, m, s, gamma, label, pred, fit["exponent"], fit["stderr"], fit["r2"], flag]


def cmd_sweep(cfg: RunConfig) -> int:
    zetas = cfg.zeta if cfg.zeta else [None]
    combos = [(m, s, g, z) for m in cfg.m for s in cfg.s for g in cfg.gamma for z in zetas]
    workers = min(thread_count(), len(combos))
    per_worker = max(1, thread_count() // workers)
    tasks = [(cfg, m, s, g, z, per_worker) for m, s, g, z in combos]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_entry, tasks))
    else:
        rows = [_sweep_entry(t) for t in tasks]
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    print(f"{len(rows)} sweep entries -> {cfg.out / 'sweep.csv'}")
    return EXIT_OK if all(r[-1] != "FAILED" for r in rows) else EXIT_SOLVER


def cmd_green(cfg: RunConfig) -> int:
    if cfg.N < 3:
        raise ConfigError("the two-sided Green kernel estimate is stated for N >= 3")
    op = cached_operator(GridSpec(cfg.N, cfg.shape, cfg.m[0]), cfg.s[0])
    grid = op.grid
    rng = np.random.default_rng(cfg.seed)
    candidates = np.flatnonzero(grid.delta >= 2 * grid.h)
    candidates = candidates[candidates != grid.center_node]
    count = min(cfg.sources - 1, candidates.size)
    sources = [grid.center_node] + sorted(int(j) for j in rng.choice(candidates, count, replace=False))
    chk = analysis.green_kernel_check(op, sources)
    actions = {}
    for kind, p in (("power", 0.5), ("power", 1.0), ("power", 1.5), ("log", 0.5)):
        actions[f"{kind}:{p}"] = analysis.green_distance_action(op, kind, p)[1].as_dict()
    cfg.out.mkdir(parents=True, exist_ok=True)
    columns = np.column_stack([green_column(op, y) for y in sources])
    with open(cfg.out / "green_columns.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(grid.N)] + ["delta"] + [f"G_{y}" for y in sources])
        for xi, d, row in zip(grid.x, grid.delta, columns):
            w.writerow([repr(float(c)) for c in xi] + [repr(float(d))] + [repr(float(v)) for v in row])
    _dump_json(cfg.out / "green_stats.json", {
        "schema_version": SCHEMA_VERSION, "N": grid.N, "shape": grid.shape, "m": grid.m, "s": op.s,
        "sources": sources, "kernel_ratio": chk.ratio.as_dict(),
        "symmetry_error": chk.symmetry_error, "max_green": chk.max_green,
        "distance_action": actions})
    print(f"kernel ratio spread={chk.ratio.spread:.4g} -> {cfg.out}")
    return EXIT_OK


def cmd_eigen(cfg: RunConfig) -> int:
    op = cached_operator(GridSpec(cfg.N, cfg.shape, cfg.m[0]), cfg.s[0])
    pair = principal_eigenpair(op)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_grid_function_csv(cfg.out / "eigenfunction.csv", op.grid, pair.eigenfunction, "phi")
    _dump_json(cfg.out / "eigen.json", {
        "schema_version": SCHEMA_VERSION, "N": op.grid.N, "shape": op.grid.shape, "m": op.grid.m,
        "s": op.s, "eigenvalue": pair.eigenvalue, "iterations": pair.iterations,
        "residual": pair.residual})
    print(f"lambda_1={pair.eigenvalue:.10g}")
    return EXIT_OK


def cmd_formulas(cfg: RunConfig) -> int:
    zeta = cfg.zeta[0] if cfg.zeta else None
    try:
        table = analysis.exponent_table(cfg.N, r=cfg.r, gamma=cfg.gamma[0], zeta=zeta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print("\n".join(table.lines()))
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import Scale, Suite
    suite = Suite(Scale.quick() if cfg.quick else Scale(), seed=cfg.seed)
    results = suite.run_all()
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "green": cmd_green, "eigen": cmd_eigen,
            "verify": cmd_verify, "formulas": cmd_formulas}


def run(cfg: RunConfig) -> int:
    with threadpool_limits(thread_count()):
        return COMMANDS[cfg.subcommand](cfg)


def main(argv=None) -> int:
    try:
        cfg, verbose = load_config(argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return run(cfg)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ContinuationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
