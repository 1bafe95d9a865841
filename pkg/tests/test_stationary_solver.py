import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from cbfhvi.cbf2d import interpolate, manufactured_case
from cbfhvi.operators import CbfParams
from cbfhvi.state_space import norm_V
from cbfhvi.stationary_solver import (SolveOptions, energy_pairing_gap, inclusion_defect, residual,
                                      solve_stationary, twin_solve_uniqueness, verify_stationary_bounds)
from cbfhvi.superpotential import arctan_law, heaviside_law, quadratic_law, zero_law

from conftest import random_state


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(eps_schedule=(1e-2, 1e-1))
    with pytest.raises(ValueError):
        SolveOptions(damping=0.0)
    with pytest.raises(ValueError):
        SolveOptions(newton_tol=-1.0)


@pytest.mark.parametrize("scale", [0.0, 2.0])
def test_linear_case_matches_direct_solve(disc8, rng, scale):
    p = CbfParams(0.7, 0.3, 0.0, 2.0, convection=False)
    law = quadratic_law(scale) if scale else zero_law()
    f = rng.standard_normal(disc8.space.n)
    rep = solve_stationary(disc8.ops, p, law, disc8.trace, f)
    K = 0.7 * disc8.space.gram_V + 0.3 * disc8.space.gram_H + scale * disc8.trace.gram()
    y_ref = spsolve(sp.csc_matrix(K), f)
    assert rep.converged
    assert norm_V(disc8.space, rep.y - y_ref) <= 1e-10 * norm_V(disc8.space, y_ref)


@pytest.mark.parametrize("r", [2.0, 3.0, 5.0])
@pytest.mark.parametrize("case", ["taylor-green", "shear"])
def test_manufactured_recovery(disc16_weak, r, case):
    p = CbfParams(1.0, 0.1, 1.0, r)
    y_star, f = manufactured_case(case, disc16_weak, p)
    rep = solve_stationary(disc16_weak.ops, p, zero_law(), disc16_weak.trace, f)
    assert rep.converged
    assert norm_V(disc16_weak.space, rep.y - y_star) <= 1e-8


@pytest.mark.parametrize("law", [quadratic_law, arctan_law, heaviside_law], ids=lambda f: f.__name__)
@pytest.mark.parametrize("r", [2.0, 3.0, 5.0])
def test_random_solve_satisfies_inclusion_and_bounds(disc16_weak, rng, law, r):
    j = law()
    p = CbfParams(1.0, 0.1, 1.0, r)
    f = 5.0 * disc16_weak.space.gram_H @ random_state(rng, disc16_weak.space, scale=1.0)
    rep = solve_stationary(disc16_weak.ops, p, j, disc16_weak.trace, f)
    assert rep.converged, rep.message
    assert residual(disc16_weak.ops, p, disc16_weak.trace, f, rep.y, rep.eta) <= 1e-9
    assert inclusion_defect(j, disc16_weak.trace, rep.y, rep.eta) <= 1e-8
    lhs, rhs = energy_pairing_gap(disc16_weak.ops, p, disc16_weak.trace, f, rep.y, rep.eta)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    assert verify_stationary_bounds(rep, disc16_weak.ops, p, j, disc16_weak.trace, f).passed


def test_jump_law_uses_both_branches(disc16_weak):
    # mixed-sign normal velocity puts boundary nodes on both sides of the jump
    d = disc16_weak
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    j = heaviside_law()
    f = d.space.gram_H @ interpolate(d, lambda x, y: np.sin(np.pi * x) * np.cos(np.pi * y))
    rep = solve_stationary(d.ops, p, j, d.trace, f)
    assert rep.converged
    u = d.trace.apply(rep.y)
    assert np.any(u > 0) and np.any(u < 0)
    assert np.all(rep.eta[u > 0] >= 1.0) and np.all(rep.eta[u < 0] < 0)
    assert inclusion_defect(j, d.trace, rep.y, rep.eta) <= 1e-8


def test_bounds_skipped_without_positive_mu_tilde(disc16, rng):
    # full-strength trace with the arctan law makes mu - C_psi ||l||^2 negative at mu = 1
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    j = arctan_law()
    f = rng.standard_normal(disc16.space.n)
    rep = solve_stationary(disc16.ops, p, j, disc16.trace, f, warn=False)
    out = verify_stationary_bounds(rep, disc16.ops, p, j, disc16.trace, f)
    assert out.status == "skipped"


def test_twin_solve_above_and_below_threshold(disc16_weak, rng):
    j = heaviside_law()
    f = 5.0 * disc16_weak.space.gram_H @ random_state(rng, disc16_weak.space, scale=1.0)
    seeds = (np.zeros(disc16_weak.space.n), random_state(rng, disc16_weak.space, scale=10.0))
    hi = twin_solve_uniqueness(disc16_weak.ops, CbfParams(1.0, 0.1, 1.0, 3.0), j, disc16_weak.trace, f, seeds)
    lo = twin_solve_uniqueness(disc16_weak.ops, CbfParams(0.3, 0.1, 1.0, 3.0), j, disc16_weak.trace, f, seeds)
    assert hi.status == "pass"
    assert lo.status == "skipped" and "agree" in lo.extra


def test_history_csv(disc8, rng, tmp_path):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    rep = solve_stationary(disc8.ops, p, heaviside_law(), disc8.trace, rng.standard_normal(disc8.space.n))
    path = tmp_path / "h.csv"
    rep.write_csv(path, extra={"run": "a"})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("run,stage,eps")
    assert len(lines) == len(rep.history) + 1
