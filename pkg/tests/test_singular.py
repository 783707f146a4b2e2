import json
import math

import numpy as np
import pytest

from mixedsing.grid import GridSpec, build_grid
from mixedsing.linsolve import solve_dirichlet
from mixedsing.singular import (SCHEMA_VERSION, LebesgueWeight, SingularPowerWeight, SingularProblem,
                                continuation_solve, detect_nonexistence, regularize_weight,
                                solve_regularized)


@pytest.fixture(scope="module")
def grid():
    return build_grid(GridSpec(2, "box", 15))


def test_regularized_power_weight_example(grid):
    fn = regularize_weight(SingularPowerWeight(1.0), 4, 1.0, grid)
    assert np.allclose(fn, 1.0 / (grid.delta + 0.0625), rtol=1e-15)


def test_regularized_weights_increase_to_datum(grid):
    for weight, gamma in ((SingularPowerWeight(1.5), 1.0), (SingularPowerWeight(0.4), 0.3),
                          (LebesgueWeight(grid.delta ** -0.7, 2.0), 0.5)):
        f = [regularize_weight(weight, n, gamma, grid) for n in (1, 2, 4, 8, 10 ** 6)]
        for a, b in zip(f, f[1:]):
            assert np.all(b >= a)
        exact = grid.delta ** -0.7 if isinstance(weight, LebesgueWeight) else grid.delta ** -weight.zeta
        assert np.all(f[-1] <= exact * (1 + 1e-15))
        assert np.allclose(f[-1], exact, rtol=1e-3)


def test_lebesgue_truncation(grid):
    w = LebesgueWeight(np.linspace(0, 10, grid.size))
    assert regularize_weight(w, 3, 0.0, grid).max() == 3.0


def test_regularize_rejects(grid):
    with pytest.raises(ValueError):
        regularize_weight(SingularPowerWeight(1.0), 0, 1.0, grid)
    with pytest.raises(ValueError):
        regularize_weight(SingularPowerWeight(2.2), 4, 1.0, grid)
    with pytest.raises(ValueError):
        regularize_weight(SingularPowerWeight(1.0), 4, 0.0, grid)
    with pytest.raises(ValueError):
        regularize_weight(LebesgueWeight(np.ones(3)), 4, 1.0, grid)
    assert np.allclose(regularize_weight(SingularPowerWeight(2.2), 4, 1.0, grid, nonexistence=True),
                       (grid.delta + 0.25) ** -2.2)


@pytest.mark.parametrize("kwargs", [dict(gamma=-1.0), dict(s=1.0), dict(schedule=(1,)),
                                    dict(schedule=(2, 1)), dict(gamma=0.0, weight=SingularPowerWeight(1.0)),
                                    dict(gamma=0.0, weight="L1")])
def test_problem_rejects(grid, kwargs):
    args = dict(gamma=1.0, s=0.5, grid=grid, weight=SingularPowerWeight(1.0))
    args.update(kwargs)
    if args["weight"] == "L1":
        args["weight"] = LebesgueWeight(np.ones(grid.size), 1.0)
    with pytest.raises(ValueError):
        SingularProblem(**args)


def test_newton_solves_regularized_equation(grid):
    p = SingularProblem(1.0, 0.5, grid, SingularPowerWeight(1.5))
    sol = solve_regularized(p, 64)
    fn = p.f_n(64)
    F = p.op.apply(sol.u) - fn / (sol.u + 1 / 64)
    assert np.max(np.abs(F)) <= 1e-10 * fn.max()
    assert sol.method == "newton" and sol.min_u > 0


def test_linear_case_is_one_solve(grid):
    p = SingularProblem(0.0, 0.5, grid, LebesgueWeight(np.ones(grid.size)))
    rep = continuation_solve(p)
    assert rep.flag == "CONVERGED"
    assert all(st["newton_iterations"] == 1 for st in rep.stages)
    assert np.allclose(rep.u, solve_dirichlet(p.op, np.ones(grid.size)).u)


@pytest.fixture(scope="module")
def report(grid):
    return continuation_solve(SingularProblem(1.0, 0.5, grid, SingularPowerWeight(1.5)))


def test_continuation_is_monotone(report):
    assert [st["n"] for st in report.stages] == [2 ** k for k in range(11)]
    assert report.monotonicity_margin >= -1e-10
    assert all(st["monotonicity_margin"] >= -1e-10 for st in report.stages[1:])
    diffs = [st["rel_sup_diff"] for st in report.stages[1:]]
    assert diffs[-1] < diffs[0]
    assert report.flag == "CONVERGED"


def test_hopf_margin_never_decreases(report):
    h = [st["hopf_margin"] for st in report.stages]
    assert all(b >= a - 1e-12 for a, b in zip(h, h[1:]))
    assert report.hopf_constant == h[0] > 0
    assert report.hopf_drift == 0.0


def test_solution_dominates_each_stage(grid, report):
    p = SingularProblem(1.0, 0.5, grid, SingularPowerWeight(1.5))
    u8 = solve_regularized(p, 8).u
    assert np.all(report.u >= u8 - 1e-10)


def test_report_json_schema(report):
    data = json.loads(report.to_json())
    assert data["schema_version"] == SCHEMA_VERSION
    assert set(data) >= {"problem", "flag", "stages", "monotonicity_margin", "hopf_constant",
                         "hopf_drift", "exponent_fit", "norms"}
    assert set(data["exponent_fit"]) == {"torsion", "delta"}
    assert data["problem"]["weight"] == {"kind": "deltapow", "zeta": 1.5}
    assert data["norms"]["Linf"] == pytest.approx(report.u.max())
    assert report.to_json() == report.to_json()


def test_nonexistence_requires_power_data(grid):
    p = SingularProblem(1.0, 0.5, grid, LebesgueWeight(np.ones(grid.size)))
    with pytest.raises(ValueError):
        detect_nonexistence(p)


def test_nonexistence_flags_strong_singularity():
    g = build_grid(GridSpec(2, "box", 7))
    p = SingularProblem(1.0, 0.5, g, SingularPowerWeight(2.5), nonexistence=True)
    rep = detect_nonexistence(p, ladder=(7, 15, 31), L_values=(1.0, 2.0))
    assert rep.flag == "NONEXISTENT"
    assert all(e["diverging"] for e in rep.nonexistence["scan"])
    assert math.isfinite(rep.u.max())
