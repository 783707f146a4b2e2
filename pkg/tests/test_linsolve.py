import csv
import math

import numpy as np
import pytest
import scipy.linalg as sla

from mixedsing.grid import GridSpec, build_grid
from mixedsing.linsolve import (SPDSolver, energy_value, green_column, principal_eigenpair,
                                solve_dirichlet, write_grid_function_csv)
from mixedsing.operator import MixedOperator


def test_direct_solve_residual(op2):
    b = np.random.default_rng(0).random(op2.size)
    res = solve_dirichlet(op2, b)
    assert res.method == "direct"
    assert np.allclose(op2.dense @ res.u, b, rtol=0, atol=1e-10 * np.abs(b).max())


def test_preconditioned_cg_agrees_with_direct():
    op = MixedOperator(build_grid(GridSpec(2, "box", 15)), 0.5)
    rng = np.random.default_rng(1)
    extra = rng.random(op.size)
    b = rng.random(op.size)
    d = SPDSolver(op, extra, method="direct").solve(b)
    c = SPDSolver(op, extra, method="conjugate-gradient", tol=1e-12).solve(b)
    assert c.iterations < 60
    assert np.allclose(c.u, d.u, rtol=1e-9, atol=0)


def test_solver_rejects_bad_rhs(op2):
    s = SPDSolver(op2)
    with pytest.raises(ValueError):
        s.solve(np.ones(3))
    with pytest.raises(ValueError):
        s.solve(np.full(op2.size, np.nan))
    with pytest.raises(ValueError):
        SPDSolver(op2, method="lu")


def test_comparison_principle(op2):
    rng = np.random.default_rng(2)
    for _ in range(5):
        f = rng.random(op2.size)
        g = f + rng.random(op2.size) * (rng.random(op2.size) < 0.3)
        assert np.all(solve_dirichlet(op2, g).u - solve_dirichlet(op2, f).u >= -1e-13)


def test_energy_minimality(op2):
    rng = np.random.default_rng(3)
    f = rng.random(op2.size)
    u = solve_dirichlet(op2, f).u
    e0 = energy_value(op2, u, f)
    for _ in range(20):
        v = rng.standard_normal(op2.size)
        assert energy_value(op2, u + 1e-3 * v, f) > e0
    with pytest.raises(ValueError):
        energy_value(op2, u, f[:-1])


def test_green_symmetry_and_representation(op3):
    rng = np.random.default_rng(4)
    cols = np.column_stack([green_column(op3, y) for y in range(op3.size)])
    assert np.max(np.abs(cols - cols.T)) <= 1e-10 * cols.max()
    assert np.all(cols > 0)
    f = rng.random(op3.size)
    u = solve_dirichlet(op3, f).u
    assert np.allclose(cols @ f * op3.grid.cell_volume, u, rtol=1e-10)
    with pytest.raises(IndexError):
        green_column(op3, op3.size)


def test_principal_eigenpair(op2):
    pair = principal_eigenpair(op2)
    ref = sla.eigh(op2.dense, eigvals_only=True, subset_by_index=[0, 0])[0]
    assert pair.eigenvalue == pytest.approx(ref, rel=1e-8)
    assert pair.eigenvalue >= 2 * math.pi ** 2
    phi = pair.eigenfunction
    assert phi.max() == 1.0 and np.all(phi > 0)
    assert np.linalg.norm(op2.apply(phi) - pair.eigenvalue * phi) <= 1e-7 * pair.eigenvalue * np.linalg.norm(phi)


def test_eigenvalue_exceeds_laplacian_bound_on_unit_square():
    for m in (7, 15):
        op = MixedOperator(build_grid(GridSpec(2, "box", m)), 0.5)
        assert principal_eigenpair(op).eigenvalue >= 2 * math.pi ** 2


def test_grid_function_csv(tmp_path, box2):
    path = tmp_path / "u.csv"
    vals = np.arange(box2.size, dtype=float)
    write_grid_function_csv(path, box2, vals, "u")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x1", "x2", "delta", "u"]
    assert len(rows) == box2.size + 1
    assert float(rows[5][3]) == 4.0
