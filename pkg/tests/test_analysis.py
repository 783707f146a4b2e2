import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedsing import analysis
from mixedsing.grid import GridSpec, build_grid
from mixedsing.linsolve import solve_dirichlet
from mixedsing.operator import MixedOperator

unit = st.floats(0.0, 50.0, allow_nan=False)


# ---------------------------------------------------------------- formulas

def test_formula_table_lebesgue_example():
    t = analysis.exponent_table(3, r=1.0, gamma=0.5)
    assert t.q == pytest.approx(1.8)
    assert t.S_r == pytest.approx(0.5)
    assert t.sigma_r == pytest.approx(4.5)
    assert t.r_sharp == pytest.approx(12 / 11)
    assert t.critical_sobolev == 6.0


def test_formula_table_power_example():
    t = analysis.exponent_table(2, gamma=1.0, zeta=1.5)
    assert t.L_star == pytest.approx(3.0)
    assert t.kappa == pytest.approx(0.25)
    assert t.boundary_exponent == pytest.approx(0.25)
    t = analysis.exponent_table(2, gamma=2.0, zeta=1.0)
    assert t.L_star == pytest.approx(2.0)
    t = analysis.exponent_table(3, gamma=1.0, zeta=0.5)
    assert t.L_star == pytest.approx(1 / 3)
    assert t.kappa == pytest.approx(0.75)
    assert analysis.exponent_table(2, gamma=0.25, zeta=0.25).boundary_exponent == 1.0
    assert analysis.exponent_table(2, gamma=0.5, zeta=0.5).boundary_exponent == pytest.approx(2 / 3)
    assert analysis.exponent_table(2, gamma=1.0, zeta=2.2).regimes["nonexistence"]


def test_formula_table_rejects():
    with pytest.raises(ValueError):
        analysis.exponent_table(2, r=1.0, gamma=0.0)
    with pytest.raises(ValueError):
        analysis.exponent_table(2, r=0.5, gamma=1.0)
    with pytest.raises(ValueError):
        analysis.exponent_table(2, gamma=-1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 1.99))
def test_kappa_plus_beta(gamma, zeta):
    t = analysis.exponent_table(3, gamma=gamma, zeta=zeta)
    assert abs(t.kappa + t.beta - 2.0) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 6), st.floats(0.0, 0.999), st.floats(0.01, 5.0))
def test_sigma_and_q_identities(N, frac, gamma):
    r = 1.0 + frac * (N / 2 - 1.0)
    t = analysis.exponent_table(N, r=r, gamma=gamma)
    assert t.sigma_r == pytest.approx(N * (t.S_r + 1) / (N - 2), rel=1e-12)
    if t.r_sharp is not None and r < t.r_sharp:
        assert t.q == pytest.approx(2 * t.sigma_r / (1 - t.S_r + t.sigma_r), rel=1e-12)


# ------------------------------------------------- algebraic inequalities

@given(unit, unit, st.floats(0.01, 10.0))
def test_power_difference_inequality(x, y, theta):
    a = (x - y) * (x ** theta - y ** theta)
    b = 4 * theta / (theta + 1) ** 2 * (x ** ((theta + 1) / 2) - y ** ((theta + 1) / 2)) ** 2
    assert b <= a * (1 + 1e-9) + 1e-12


@given(unit, unit, st.floats(0.01, 1.0))
def test_holder_continuity_of_powers(x, y, theta):
    assert abs(x ** theta - y ** theta) <= abs(x - y) ** theta * (1 + 1e-12) + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.2, 4.0))
def test_discrete_power_energy_inequality(seed, theta):
    # the pointwise inequality summed against the M-matrix with positive row sums
    op = _small_op()
    u = np.random.default_rng(seed).random(op.size)
    lhs = u ** theta @ op.apply(u)
    w = u ** ((theta + 1) / 2)
    assert 4 * theta / (theta + 1) ** 2 * (w @ op.apply(w)) <= lhs * (1 + 1e-10)


_OP = {}


def _small_op():
    if "op" not in _OP:
        _OP["op"] = MixedOperator(build_grid(GridSpec(2, "box", 7)), 0.5)
    return _OP["op"]


# -------------------------------------------------------------- fits

@pytest.fixture(scope="module")
def fine():
    return build_grid(GridSpec(2, "box", 127))


@pytest.mark.parametrize("kappa", [0.25, 0.5, 1.0, 1.7])
def test_power_fit_is_exact_on_synthetic_profiles(fine, kappa):
    fit = analysis.fit_boundary_exponent(3.0 * fine.delta ** kappa, fine)
    assert fit.exponent == pytest.approx(kappa, abs=1e-8)
    assert fit.r2 == pytest.approx(1.0) and fit.reliable
    assert fit.window == pytest.approx((5 * fine.h, 0.2 * fine.diameter))


@pytest.mark.parametrize("p", [0.5, 2 / 3, 1.0])
def test_log_fit_is_exact_on_synthetic_profiles(fine, p):
    u = fine.delta * np.log(fine.diameter / fine.delta) ** p
    fit = analysis.fit_boundary_exponent(u, fine, mode="log-corrected")
    assert fit.exponent == pytest.approx(p, abs=1e-8)


def test_fit_with_reference(fine):
    ref = fine.delta * (1 + fine.delta)
    fit = analysis.fit_boundary_exponent(ref ** 0.4, fine, reference=ref)
    assert fit.exponent == pytest.approx(0.4, abs=1e-8)


def test_fit_rejects(fine):
    u = fine.delta
    with pytest.raises(ValueError):
        analysis.fit_boundary_exponent(u, fine, mode="cubic")
    with pytest.raises(ValueError):
        analysis.fit_boundary_exponent(u, fine, window=(fine.h, 0.2))
    with pytest.raises(ValueError):
        analysis.fit_boundary_exponent(u, fine, window=(0.05, 0.9))
    with pytest.raises(ValueError):
        analysis.fit_boundary_exponent(u, fine, window=(0.1, 0.11))
    with pytest.raises(ValueError):
        analysis.fit_boundary_exponent(-u, fine)


def test_torsion_function_is_comparable_to_distance():
    op = MixedOperator(build_grid(GridSpec(2, "box", 31)), 0.5)
    ratio = analysis.torsion_function(op) / op.grid.delta
    assert ratio.min() > 0 and ratio.max() / ratio.min() < 5


# -------------------------------------------------------------- norms

def test_gagliardo_forms_agree(op2):
    u = np.random.default_rng(5).random(op2.size)
    assert analysis.gagliardo_seminorm(u, op2) == pytest.approx(analysis.gagliardo_double_sum(u, op2),
                                                                rel=1e-12)


def test_lebesgue_norm(box2):
    u = np.full(box2.size, 2.0)
    vol = box2.size * box2.cell_volume
    assert analysis.lebesgue_norm(u, 1, box2) == pytest.approx(2 * vol)
    assert analysis.lebesgue_norm(u, 3, box2) == pytest.approx(2 * vol ** (1 / 3))
    assert analysis.lebesgue_norm(-u, math.inf, box2) == 2.0


def test_h1_power_norm_matches_dirichlet(box2):
    from mixedsing.operator import dirichlet_energy
    u = box2.delta
    assert analysis.h1_power_norm(u, 1.5, box2) == pytest.approx(dirichlet_energy(box2, u ** 1.5))


def test_exp_moment(box2):
    g = build_grid(GridSpec(3, "box", 5))
    m = analysis.exp_moment(np.zeros(g.size), 1.0, g)
    assert m.value == pytest.approx(g.size * g.cell_volume) and not m.capped
    u = np.full(g.size, 0.5)
    assert analysis.exp_moment(u, 2.0, g).value == pytest.approx(math.exp(3.0) * g.size * g.cell_volume)
    assert analysis.exp_moment(np.full(g.size, 1e4), 1.0, g).capped
    with pytest.raises(ValueError):
        analysis.exp_moment(np.zeros(box2.size), 1.0, box2)


def test_admissible_beta_solves_its_equation():
    gamma, fn, S = 0.5, 2.0, 0.4
    beta = analysis.admissible_beta(gamma, fn, S)
    assert beta > 0
    # larger data or Sobolev constant shrink the admissible range
    assert analysis.admissible_beta(gamma, 2 * fn, S) < beta
    assert analysis.admissible_beta(gamma, fn, 2 * S) < beta


def test_sobolev_constant_is_below_sharp_constant():
    g = build_grid(GridSpec(3, "box", 9))
    S = analysis.sobolev_constant(g, trials=5, steps=50)
    sharp = (1 / math.sqrt(3 * math.pi)) * (math.gamma(3) / math.gamma(1.5)) ** (1 / 3)
    assert 0.2 < S <= sharp * 1.05
    assert S == analysis.sobolev_constant(g, trials=5, steps=50)


def test_classify_growth():
    assert analysis.classify_growth([1, 1.5, 2.4]) == "DIVERGENT"
    assert analysis.classify_growth([1, 1.02, 1.03]) == "BOUNDED"
    assert analysis.classify_growth([1, 1.5, 1.55]) == "INCONCLUSIVE"


@pytest.mark.parametrize("kappa,L,expected", [(0.25, 2.0, "DIVERGENT"), (0.25, 4.0, "BOUNDED"),
                                              (0.5, 2.0, "BOUNDED"), (1.0, 1.0, "BOUNDED")])
def test_hardy_side_synthetic(kappa, L, expected):
    norms = analysis.hardy_profile_norms(kappa, L, (31, 63, 127))
    assert analysis.classify_growth(norms) == expected


# --------------------------------------------------------- Green actions

@pytest.fixture(scope="module")
def ball3():
    return MixedOperator(build_grid(GridSpec(3, "ball", 13)), 0.5)


def test_green_profiles():
    d = np.array([0.1, 0.01])
    assert np.allclose(analysis.green_profile(d, 2.0, "power", 0.5), d)
    assert np.allclose(analysis.green_profile(d, 2.0, "power", 1.0), d * np.log(2 / d))
    assert np.allclose(analysis.green_profile(d, 2.0, "power", 1.5), d ** 0.5)
    assert np.allclose(analysis.green_profile(d, 2.0, "log", 0.5), d * np.log(2 / d) ** 0.5)


def test_green_distance_action_bounded_ratios(ball3):
    for kind, p in (("power", 0.5), ("power", 1.0), ("power", 1.5), ("log", 0.5)):
        v, stats = analysis.green_distance_action(ball3, kind, p)
        assert stats.min > 0 and stats.spread < 10
        assert np.all(v > 0)
    with pytest.raises(ValueError):
        analysis.green_distance_action(ball3, "power", 2.0)
    with pytest.raises(ValueError):
        analysis.green_distance_action(ball3, "log", 1.0)


def test_green_kernel_check(ball3):
    g = ball3.grid
    chk = analysis.green_kernel_check(ball3, [g.center_node])
    assert chk.ratio.spread < 50 and chk.symmetry_error == 0.0
    with pytest.raises(ValueError):
        analysis.green_kernel_check(ball3, [int(np.argmin(g.delta))])


def test_hopf_ratio_positive(ball3):
    f = np.random.default_rng(0).random(ball3.size)
    assert analysis.hopf_ratio(ball3, f) > 0


def test_continuity_gap():
    g = build_grid(GridSpec(3, "box", 5))
    op = MixedOperator(g, 0.5)
    f = np.ones(g.size)
    u = solve_dirichlet(op, f).u
    lhs, rhs = analysis.continuity_gap(u, u, f, f, 1.2, 1.0, g, 1.0)
    assert lhs == 0.0 and rhs == 0.0
    with pytest.raises(ValueError):
        analysis.continuity_gap(u, u, f, f, 1.6, 1.0, g, 1.0)
    with pytest.raises(ValueError):
        analysis.continuity_gap(u, u, f, f, 1.2, 0.5, g, 1.0)
