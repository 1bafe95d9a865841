import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from cbfhvi.superpotential import (LAWS, HypothesisViolation, C1_constant, J_value, arctan_law, default_grid,
                                   downward_jump_law, estimate_growth, estimate_relaxed_monotonicity,
                                   heaviside_law, load_table, make_law, monotonicity_profile, polynomial_law,
                                   quadratic_law, smoothed_g, subdiff, subdiff_bounds, verify_hypotheses, zero_law)

SHIPPED = [quadratic_law, arctan_law, heaviside_law]
xs = st.floats(-20, 20, allow_nan=False)


@pytest.mark.parametrize("law", SHIPPED + [zero_law], ids=lambda f: f.__name__)
def test_declared_constants_accepted(law):
    j = law()
    rep = verify_hypotheses(j)
    assert rep["accepted"], rep
    assert estimate_growth(j, default_grid(j)) <= j.C0 + 1e-12
    assert estimate_relaxed_monotonicity(j, default_grid(j)) <= j.m + 1e-10


def test_arctan_constants_are_tight():
    rep = verify_hypotheses(arctan_law())
    # inf g' = -1 is attained at 0, so m_hat approaches 1 from below
    assert rep["m_hat"] == pytest.approx(1.0, abs=1e-3)


def test_downward_jump_rejected_with_diverging_estimate():
    j = downward_jump_law()
    assert not verify_hypotheses(j)["accepted"]
    with pytest.raises(HypothesisViolation) as info:
        estimate_relaxed_monotonicity(j, default_grid(j))
    assert info.value.estimate > 1e5
    prof = monotonicity_profile(j, [1e-1, 1e-2, 1e-3, 1e-4])
    m_hat = np.array([m for _, m in prof])
    gaps = np.array([g for g, _ in prof])
    assert np.all(np.diff(m_hat) > 0)
    # breakpoint value 0 against gap - 1 at distance gap: m_hat = 1/gap - 1
    assert np.allclose(m_hat, 1 / gaps - 1, rtol=1e-9)


def test_declaring_large_m_does_not_rescue_a_downward_jump():
    assert not verify_hypotheses(downward_jump_law(declared_m=1e3))["accepted"]


def test_subdifferential_at_jump():
    j = heaviside_law()
    assert subdiff(j, 0.0) == (0.0, 1.0)
    assert subdiff(j, 0.5) == (1.5, 1.5)
    assert subdiff(j, -0.5) == (-0.5, -0.5)
    lo, hi = subdiff_bounds(j, np.array([-1e-12, 0.0, 1e-12]), snap=1e-10)
    assert np.all(lo == 0.0) and np.all(hi == 1.0)


@pytest.mark.parametrize("law", SHIPPED, ids=lambda f: f.__name__)
def test_j_is_antiderivative_of_g(law):
    j = law()
    for a in (-3.0, -0.7, 0.4, 2.5):
        ref = quad(lambda t: float(j.g(np.array([t]))[0]), 0.0, a, points=[0.0], limit=200)[0]
        assert float(j.j(np.array([a]))[0]) == pytest.approx(ref, rel=1e-10, abs=1e-12)


@given(xs)
def test_smoothing_converges_away_from_breakpoints(x):
    j = heaviside_law()
    if abs(x) < 1e-3:
        return
    val, _ = smoothed_g(j, np.array([x]), 1e-4)
    assert val[0] == pytest.approx(float(j.g(np.array([x]))[0]), abs=1e-12)


@given(xs)
def test_smoothed_value_inside_clarke_hull(x):
    j = heaviside_law()
    eps = 1e-2
    val, der = smoothed_g(j, np.array([x]), eps)
    lo = min(subdiff(j, x - eps)[0], subdiff(j, x + eps)[0])
    hi = max(subdiff(j, x - eps)[1], subdiff(j, x + eps)[1])
    assert lo - 1e-12 <= val[0] <= hi + 1e-12
    assert der[0] >= 0


@given(xs, xs)
def test_relaxed_monotonicity_property(x1, x2):
    j = arctan_law()
    if x1 == x2:
        return
    z1, z2 = j.g(np.array([x1, x2]))
    assert (z1 - z2) * (x1 - x2) >= -j.m * (x1 - x2) ** 2 - 1e-12


@given(xs)
def test_growth_property(x):
    for law in SHIPPED:
        j = law()
        lo, hi = subdiff(j, x)
        assert max(abs(lo), abs(hi)) <= j.C0 * (1 + abs(x)) + 1e-12


def test_C1_constant():
    assert C1_constant(1.0, 4.0) == pytest.approx(2 * math.sqrt(2))
    assert C1_constant(2.0, 0.25) == pytest.approx(2 * math.sqrt(2))
    with pytest.raises(ValueError):
        C1_constant(1.0, 0.0)


def test_J_value_sums_boundary_densities(disc8, rng):
    j = quadratic_law(2.0)
    u = rng.standard_normal(disc8.trace.n_U)
    assert J_value(j, disc8.trace, u) == pytest.approx(np.sum(disc8.trace.wGamma * u**2))


def test_table_round_trip(tmp_path):
    p = tmp_path / "law.txt"
    p.write_text("name two-step  # comment\nC0 2.5\nm 0.0\nbreakpoints -1 1\npiece 0 1\npiece 0.5 1\npiece 1 1\n")
    j = load_table(p)
    ref = polynomial_law([-1, 1], [[0, 1], [0.5, 1], [1, 1]], 2.5, 0.0, "two-step")
    x = np.linspace(-3, 3, 61)
    assert np.array_equal(j.g(x), ref.g(x))
    assert subdiff(j, -1.0) == (-1.0, -0.5)
    assert verify_hypotheses(j)["accepted"]
    p.write_text("C0 1\nwhat 3\n")
    with pytest.raises(ValueError):
        load_table(p)


def test_registry():
    assert set(LAWS) >= {"zero", "quadratic", "arctan", "heaviside", "downward-jump"}
    assert make_law("quadratic", 3.0).C0 == 3.0
    with pytest.raises(ValueError):
        make_law("nope")
