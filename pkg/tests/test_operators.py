import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize_scalar

from cbfhvi import operators as opx
from cbfhvi.operators import (B_jacobian, C_jacobian, CbfParams, F_jacobian, apply_B, apply_C, apply_F,
                              b_form, compute_thresholds, gateaux_C, regime_of, rho_formula)
from cbfhvi.state_space import norm_H, norm_Lp, norm_V

from conftest import random_state

seeds = st.integers(0, 2**32 - 1)


def test_params_validation():
    with pytest.raises(ValueError):
        CbfParams(1.0, 0.1, 1.0, 0.5)
    with pytest.raises(ValueError):
        CbfParams(0.0, 0.1, 1.0, 3.0)
    with pytest.raises(ValueError):
        CbfParams(1.0, -1.0, 1.0, 3.0)
    assert CbfParams(1.0, 0.0, 0.0, 2.0, convection=False).flags() == ["alpha=0", "beta=0", "no-convection"]


def _rho_oracle(r, beta, mu):
    # rho = max_{s >= 0} s^2 - beta mu s^(r-1)
    res = minimize_scalar(lambda s: -(s * s - beta * mu * s ** (r - 1)), bounds=(0, 50), method="bounded",
                          options={"xatol": 1e-12})
    return -res.fun


@pytest.mark.parametrize("r,beta,mu", [(5, 1, 1), (4, 2, 0.5), (7, 0.3, 1.5), (3.5, 1, 1)])
def test_rho_matches_numerical_maximum(r, beta, mu):
    assert rho_formula(r, beta, mu) == pytest.approx(_rho_oracle(r, beta, mu), rel=1e-8)


def test_rho_reference_value():
    assert opx.rho_constant(CbfParams(1.0, 0.1, 1.0, 5.0)) == 0.25
    with pytest.raises(ValueError):
        rho_formula(3.0, 1.0, 1.0)


def test_b_form_and_dual_vector_agree(disc8, rng):
    y, z, w = (rng.standard_normal(disc8.space.n) for _ in range(3))
    assert apply_B(disc8.ops, y, z) @ w == pytest.approx(b_form(disc8.ops, y, z, w), rel=1e-12)


def test_B_jacobian_finite_difference(disc8, rng):
    y, d = rng.standard_normal(disc8.space.n), rng.standard_normal(disc8.space.n)
    h = 1e-6
    fd = (apply_B(disc8.ops, y + h * d, y + h * d) - apply_B(disc8.ops, y - h * d, y - h * d)) / (2 * h)
    ex = B_jacobian(disc8.ops, y) @ d
    assert np.linalg.norm(fd - ex) <= 1e-7 * np.linalg.norm(ex)


@pytest.mark.parametrize("r", [1.0, 1.5, 2.0, 3.0, 4.5])
def test_C_jacobian_matches_gateaux(disc8, rng, r):
    y, z = rng.standard_normal(disc8.space.n), rng.standard_normal(disc8.space.n)
    assert np.allclose(C_jacobian(disc8.ops, y, r) @ z, gateaux_C(disc8.ops, y, z, r), rtol=1e-12, atol=0)


def test_gateaux_vanishes_at_zero_for_subcritical(disc8, rng):
    z = rng.standard_normal(disc8.space.n)
    out = gateaux_C(disc8.ops, np.zeros(disc8.space.n), z, 2.0)
    assert np.all(np.isfinite(out)) and np.allclose(out, 0)


def test_F_jacobian_finite_difference(disc8, rng, params):
    y, d = rng.standard_normal(disc8.space.n), rng.standard_normal(disc8.space.n)
    h = 1e-6
    fd = (apply_F(disc8.ops, params, y + h * d) - apply_F(disc8.ops, params, y - h * d)) / (2 * h)
    ex = F_jacobian(disc8.ops, params, y) @ d
    assert np.linalg.norm(fd - ex) <= 1e-7 * np.linalg.norm(ex)


def test_C_for_r1_is_mass(disc8, rng):
    y = rng.standard_normal(disc8.space.n)
    assert np.allclose(apply_C(disc8.ops, y, 1.0), disc8.space.gram_H @ y, rtol=1e-12)


@given(seeds, st.floats(1.0, 6.0))
def test_damping_monotonicity_property(disc8, seed, r):
    rng = np.random.default_rng(seed)
    y, z = random_state(rng, disc8.space), random_state(rng, disc8.space)
    assert opx.verify_monotonicity_C(disc8.ops, y, z, r).passed


@given(seeds, st.floats(1.0, 5.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_coercivity_identity_property(disc8, seed, r, alpha, beta):
    rng = np.random.default_rng(seed)
    p = CbfParams(1.3, alpha, beta, r)
    assert opx.verify_coercivity(disc8.ops, p, random_state(rng, disc8.space)).passed


@given(seeds)
def test_skew_symmetry_property(disc8, seed):
    rng = np.random.default_rng(seed)
    y, z = random_state(rng, disc8.space), random_state(rng, disc8.space)
    assert opx.verify_skew_symmetry(disc8.ops, y, z).passed
    # antisymmetry in the last two slots
    w = random_state(rng, disc8.space)
    assert b_form(disc8.ops, y, z, w) == pytest.approx(-b_form(disc8.ops, y, w, z), rel=1e-12, abs=1e-12)


@given(seeds, st.floats(3.2, 6.0))
def test_local_monotonicity_property(disc8, seed, r):
    rng = np.random.default_rng(seed)
    p = CbfParams(1.0, 0.1, 1.0, r)
    y, z = random_state(rng, disc8.space), random_state(rng, disc8.space)
    assert opx.verify_local_monotonicity_F(disc8.ops, p, y, z).passed


def test_local_monotonicity_not_covered(disc8, rng):
    y, z = rng.standard_normal((2, disc8.space.n))
    with pytest.raises(ValueError):
        opx.verify_local_monotonicity_F(disc8.ops, CbfParams(1.0, 0.1, 1.0, 2.0), y, z)
    with pytest.raises(ValueError):
        opx.verify_local_monotonicity_F(disc8.ops, CbfParams(0.2, 0.1, 1.0, 3.0), y, z)


@pytest.mark.parametrize("r", [1.0, 2.5, 4.0])
def test_gateaux_order(disc8, rng, r):
    rep = opx.verify_gateaux(disc8.ops, rng.standard_normal(disc8.space.n), rng.standard_normal(disc8.space.n), r)
    assert rep.passed


def test_weighted_gap_r1_is_H_norm(disc8, rng):
    y, d = rng.standard_normal((2, disc8.space.n))
    assert opx.weighted_gap_sq(disc8.ops, y, d, 1.0) == pytest.approx(norm_H(disc8.space, d) ** 2, rel=1e-12)


def test_coercivity_gap_components(disc8, rng):
    p = CbfParams(2.0, 0.5, 3.0, 2.0)
    y = rng.standard_normal(disc8.space.n)
    _, rhs = opx.coercivity_gap(disc8.ops, p, y)
    sp_ = disc8.space
    assert rhs == pytest.approx(2 * norm_V(sp_, y) ** 2 + 0.5 * norm_H(sp_, y) ** 2 + 3 * norm_Lp(sp_, y, 3) ** 3)


def test_regimes():
    assert [regime_of(r) for r in (2, 3, 4)] == ["subcritical", "critical", "supercritical"]


def test_thresholds_by_hand():
    C_psi, ln, m = 2.0, 0.5, 1.0
    # critical: 1/(2 beta) + C_psi ||l||^2
    th = compute_thresholds(CbfParams(1.5, 0.1, 1.0, 3.0), C_psi, ln, m)
    assert th.stationary_uniqueness_mu == pytest.approx(0.5 + 0.5)
    assert th.mu_tilde == pytest.approx(1.0) and th.mu_hat == pytest.approx(1.25)
    assert th.mu_bar == pytest.approx(1.5 - 0.5 - 0.25)
    assert th.stationary_unique and th.rothe_wellposed
    # supercritical: min(rho(mu_hat)/(2 alpha) + m l^2, max(1/(2 beta), 1/(4 alpha) + m l^2))
    p = CbfParams(2.0, 0.5, 1.0, 5.0)
    th = compute_thresholds(p, C_psi, ln, m)
    mu_hat = 2.0 - 0.25
    first = rho_formula(5.0, 1.0, mu_hat) / 1.0 + 0.25
    second = max(0.5, 0.5 + 0.25)
    assert th.stationary_uniqueness_mu == pytest.approx(min(first, second))
    assert th.rho == 0.125
    # subcritical, d = 2: (C/alpha)^(1/3) ((C_psi l + |f|) / mu_tilde)^(4/3) + m l^2
    p = CbfParams(2.0, 0.5, 1.0, 2.0)
    th = compute_thresholds(p, C_psi, ln, m, f_dual=1.0, generic_C=4.0)
    mu_t = 2.0 - 0.5
    expect = (4.0 / 0.5) ** (1 / 3) * ((1.0 + 1.0) / mu_t) ** (4 / 3) + 0.25
    assert th.stationary_uniqueness_mu == pytest.approx(expect)
    assert math.isinf(compute_thresholds(CbfParams(0.4, 0.5, 1.0, 2.0), C_psi, ln, m).stationary_uniqueness_mu)
