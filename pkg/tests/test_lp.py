import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from fair_reweigh import lp
from fair_reweigh.influence import InfluenceTable

from .oracles import budgeted_instance, grid_search, relaxed_instance, vertex_enumeration


def T(i_fair, i_util, gap=1.0):
    return InfluenceTable(np.asarray(i_fair, float), np.asarray(i_util, float), gap, "eop")


def random_table(rng, n, scale=1.0):
    return T(scale * rng.normal(size=n), scale * rng.normal(size=n), float(rng.uniform(0.05, 1.5)) * scale)


# -- hand examples ---------------------------------------------------------------------

def test_relaxed_single_binding_constraint():
    out = lp.solve_relaxed(T([-2, 1], [-1, -1]), 0.0, 0.0)
    assert out.optimal and out.which == "relaxed"
    np.testing.assert_allclose(out.w_star, [0.5, 0.0], atol=1e-12)
    assert out.objective_value == pytest.approx(0.5, abs=1e-12)


def test_relaxed_infeasible_when_nothing_reduces_the_gap():
    out = lp.solve_relaxed(T([0.5, 1.0, 0.0], [-1, 1, 0]), 0.3, 0.0)
    assert not out.optimal and out.status == "infeasible"
    assert out.phase1_objective > lp.FEAS_TOL


def test_relaxed_needs_positive_gap():
    with pytest.raises(ValueError):
        lp.solve_relaxed(T([-1], [0], gap=0.0))


def test_budgeted_no_improving_direction():
    out = lp.solve_budgeted(T([1, 2], [3, -4]), 0.5)
    np.testing.assert_array_equal(out.w_star, [0.0, 0.0])
    assert out.objective_value == 0.0


def test_budgeted_two_variable_geometry():
    # w2 <= w1 / 2 from the utility row and w1 + w2 <= 1 from the budget cross at (2/3, 1/3)
    table = T([-1, -3], [-1, 2])
    out = lp.solve_budgeted(table, 0.5)
    np.testing.assert_allclose(out.w_star, [2 / 3, 1 / 3], atol=1e-12)
    assert out.objective_value == pytest.approx(-5 / 3, abs=1e-12)
    grid_val = grid_search(*budgeted_instance(table, 0.5), step=0.01)
    assert out.objective_value <= grid_val + 1e-12
    assert grid_val - out.objective_value < 0.02
    # the corner (1, 0) is feasible but worse
    assert -1.0 > out.objective_value


def test_budgeted_util_scaling_keeps_optimum():
    rng = np.random.default_rng(4)
    table = random_table(rng, 9)
    base = lp.solve_budgeted(table, 0.3)
    for c in (1e-3, 0.5, 40.0):
        out = lp.solve_budgeted(T(table.i_fair, c * table.i_util, table.fair_gap_surrogate), 0.3)
        assert out.objective_value == pytest.approx(base.objective_value, abs=1e-9)


def test_budgeted_input_validation():
    with pytest.raises(ValueError):
        lp.solve_budgeted(T([1], [1]), 0.0)


def test_min_util_bound():
    assert lp.min_util_bound(T([0, 0, 0], [-2, 1, -0.5])) == -2.5
    assert lp.min_util_bound(T([0, 0], [0.1, 3.0])) == 0.0


def test_min_util_bound_grid():
    rng = np.random.default_rng(7)
    u = rng.normal(size=5)
    levels = np.linspace(0, 1, 11)
    brute = min(float(np.dot(v, u)) for v in itertools.product(levels, repeat=5))
    assert lp.min_util_bound(T(np.zeros(5), u)) == pytest.approx(brute, abs=1e-12)


# -- oracles ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(40))
def test_against_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, int(rng.integers(1, 13)))
    beta, gamma, alpha = rng.uniform(0, 0.9), rng.uniform(0, 0.4), rng.uniform(0.01, 1.0)
    val, _ = vertex_enumeration(*relaxed_instance(table, beta, gamma))
    out = lp.solve_relaxed(table, beta, gamma)
    if val is None:
        assert not out.optimal
    else:
        assert out.optimal and abs(out.objective_value - val) <= 1e-7
    val, _ = vertex_enumeration(*budgeted_instance(table, alpha))
    assert abs(lp.solve_budgeted(table, alpha).objective_value - val) <= 1e-7


def test_eight_variable_grid_bracket():
    # coarse lattice to keep 8 variables tractable; the bracket width scales with the step
    rng = np.random.default_rng(11)
    table = T(rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8), 0.4)
    for step in (0.25, 0.5):
        for out, inst in ((lp.solve_relaxed(table, 0.2, 0.1), relaxed_instance(table, 0.2, 0.1)),
                          (lp.solve_budgeted(table, 0.2), budgeted_instance(table, 0.2))):
            exact = grid_search(*inst, step=step)
            loose = grid_search(*inst, step=step, slack=True)
            if exact is not None:
                assert out.objective_value <= exact + 1e-9
            assert loose <= out.objective_value + step + 1e-12


@pytest.mark.parametrize("seed", range(30))
def test_against_highs(seed):
    # external solver as a second route on larger instances
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(20, 300))
    table = random_table(rng, n)
    for spec in (lp.relaxed_spec(table, 0.1, 0.2), lp.budgeted_spec(table, 0.05)):
        a = np.array([c.coeffs for c in spec.constraints])
        b = np.array([c.rhs for c in spec.constraints])
        ref = linprog(spec.objective, A_ub=a, b_ub=b, bounds=(0, 1), method="highs")
        out = lp.solve(spec)
        if ref.status == 2:
            assert not out.optimal
        else:
            assert out.optimal
            assert out.objective_value == pytest.approx(ref.fun, abs=1e-7 * max(1, abs(ref.fun)))


def test_degenerate_integer_instance_terminates():
    # many ties in ratios and reduced costs
    n = 40
    table = T(-np.ones(n), np.tile([1.0, -1.0], n // 2), 3.0)
    out = lp.solve_relaxed(table, 0.0, 0.5)
    # utility row needs sum w * i_util <= 0.5 * (-20): ten units of the negative-utility samples
    assert out.optimal and out.objective_value == pytest.approx(10.0)
    spec = lp.relaxed_spec(table, 0.0, 0.5)
    ref = linprog(spec.objective, A_ub=[c.coeffs for c in spec.constraints],
                  b_ub=[c.rhs for c in spec.constraints], bounds=(0, 1), method="highs")
    assert ref.fun == pytest.approx(10.0)
    out = lp.solve_budgeted(table, 0.1)
    assert out.optimal and out.objective_value == pytest.approx(-4.0)


def test_equality_constraint():
    spec = lp.LPSpec([1.0, 2.0, -1.0], [([1.0, 1.0, 1.0], "=", 1.5)])
    out = lp.solve(spec)
    val, _ = vertex_enumeration(spec.objective, [[1, 1, 1]], ["="], [1.5])
    assert out.objective_value == pytest.approx(val)
    assert out.residuals[0] <= 1e-9


def test_lp_dump_format():
    text = lp.relaxed_spec(T([-1, 0.5], [0.2, -0.3], 0.5), 0.0, 0.0).to_lp_format("x")
    lines = text.splitlines()
    assert lines[1] == "Minimize" and "Subject To" in lines and lines[-1] == "End"
    assert any(line.strip().startswith("c0:") and "<= -0.5" in line for line in lines)


# -- properties --------------------------------------------------------------------------

@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30))
def test_feasibility_certificate(seed, n):
    rng = np.random.default_rng(seed)
    table = random_table(rng, n)
    for out, spec in ((lp.solve_relaxed(table, 0.3, 0.2), lp.relaxed_spec(table, 0.3, 0.2)),
                      (lp.solve_budgeted(table, 0.1), lp.budgeted_spec(table, 0.1))):
        if out.optimal:
            assert np.all(spec.residuals(out.w_star) <= lp.FEAS_TOL)
            assert np.all(out.w_star >= -1e-9) and np.all(out.w_star <= 1 + 1e-9)
        else:
            assert out.phase1_objective > lp.FEAS_TOL


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_relaxed_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 10)
    a, b = lp.solve_relaxed(table, 0.2, 0.1), lp.solve_relaxed(table.scaled(c), 0.2, 0.1)
    assert a.optimal == b.optimal
    if a.optimal:
        assert a.objective_value == pytest.approx(b.objective_value, abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_relaxed_monotone_in_beta(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 12)
    prev = None
    for beta in np.linspace(0, 0.9, 10):
        out = lp.solve_relaxed(table, beta, 0.2)
        val = out.objective_value if out.optimal else np.inf
        if prev is not None:
            assert val <= prev + 1e-9
        prev = val


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 25))
def test_budgeted_nontrivial_when_witness_exists(seed, n):
    rng = np.random.default_rng(seed)
    table = random_table(rng, n)
    out = lp.solve_budgeted(table, 0.1)
    assert out.optimal
    witness = np.any((table.i_fair < 0) & (table.i_util <= 0))
    if witness:
        assert out.objective_value < 0 and np.any(out.w_star > 0)
    else:
        assert out.objective_value <= 0
