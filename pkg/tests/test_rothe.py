import numpy as np
import pytest
import scipy.linalg as sl

from cbfhvi.cbf2d import interpolate
from cbfhvi.operators import CbfParams
from cbfhvi.rothe import (RotheError, convergence_study, discretize_forcing, energy_equality_defect,
                          energy_ledger_check, eval_constant, eval_linear, initial_approximation, interpolant_gap,
                          interpolant_gap_quadrature, run, twin_run_gronwall)
from cbfhvi.state_space import norm_H
from cbfhvi.stationary_solver import SolveOptions
from cbfhvi.superpotential import arctan_law, heaviside_law, quadratic_law, zero_law


def tg(disc, amp=0.3):
    return amp * interpolate(disc, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))


def test_forcing_discretization():
    v = np.array([1.0, -2.0])
    tab = discretize_forcing(lambda t: t * v, 1.0, 4)
    # Gauss averages of a linear profile are the midpoint values
    assert np.allclose(tab, np.outer([0.125, 0.375, 0.625, 0.875], v), rtol=1e-14)
    assert np.array_equal(discretize_forcing(v, 1.0, 3), np.tile(v, (3, 1)))
    with pytest.raises(ValueError):
        discretize_forcing(np.zeros((2, 2)), 1.0, 3)
    with pytest.raises(ValueError):
        discretize_forcing(v, 1.0, 0)


def test_initial_approximation_bound(disc8):
    y0 = tg(disc8)
    y, C = initial_approximation(y0, 2.0, disc8.space)
    assert np.array_equal(y, y0)
    for N in (1, 10, 100):
        assert norm_H(disc8.space, y) <= C / np.sqrt(2.0 / N)


def test_zero_data_gives_zero_trajectory(disc8):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    traj = run(disc8.ops, p, heaviside_law(), disc8.trace, np.zeros(disc8.space.n), np.zeros(disc8.space.n),
               1.0, 10)
    assert np.all(traj.snapshots == 0)
    assert all(r.identity_residual == 0 for r in traj.energy)


def test_linear_decay_matches_scalar_recursion(disc8):
    p = CbfParams(0.5, 0.2, 0.0, 1.0, convection=False)
    K = (p.mu * disc8.space.gram_V + p.alpha * disc8.space.gram_H).toarray()
    lam, vecs = sl.eigh(K, disc8.space.gram_H.toarray())
    phi = vecs[:, 0]
    T, N = 1.0, 20
    traj = run(disc8.ops, p, zero_law(), disc8.trace, phi, np.zeros(disc8.space.n), T, N)
    k = T / N
    for i, y in enumerate(traj.snapshots):
        assert np.allclose(y, (1 + k * lam[0]) ** (-i) * phi, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("law", [quadratic_law, arctan_law, heaviside_law], ids=lambda f: f.__name__)
@pytest.mark.parametrize("r", [2.0, 3.0, 5.0])
def test_energy_ledger(disc16_weak, law, r):
    p = CbfParams(1.0, 0.1, 1.0, r)
    j = law()
    f0 = disc16_weak.space.gram_H @ tg(disc16_weak, 3.0)
    traj = run(disc16_weak.ops, p, j, disc16_weak.trace, tg(disc16_weak), lambda t: np.sin(2 * np.pi * t) * f0,
               1.0, 20)
    rep = energy_ledger_check(traj, disc16_weak.ops, p, j, disc16_weak.trace)
    assert rep.passed, rep.extra
    assert rep.extra["identity_ok"] and rep.extra["cumulative_ok"] and rep.extra["multiplier_ok"]


def test_interpolants(disc8):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    traj = run(disc8.ops, p, heaviside_law(), disc8.trace, tg(disc8), np.zeros(disc8.space.n), 1.0, 8)
    k = traj.k
    assert np.array_equal(eval_linear(traj, 3 * k), traj.snapshots[3])
    assert np.allclose(eval_linear(traj, 2.5 * k), 0.5 * (traj.snapshots[2] + traj.snapshots[3]))
    assert np.array_equal(eval_constant(traj, 2.5 * k), traj.snapshots[3])
    gap, predicted = interpolant_gap(traj, disc8.space)
    sq = sum(norm_H(disc8.space, b - a) ** 2 for a, b in zip(traj.snapshots, traj.snapshots[1:]))
    assert gap == pytest.approx(k / 3 * sq, rel=1e-13)
    assert predicted == pytest.approx(gap, rel=1e-13)
    assert interpolant_gap_quadrature(traj, disc8.space, subintervals=64) == pytest.approx(gap, rel=1e-10)


def test_energy_equality_defect_shrinks(disc8):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    y0 = tg(disc8)
    d = []
    for N in (10, 20, 40):
        traj = run(disc8.ops, p, quadratic_law(), disc8.trace, y0, np.zeros(disc8.space.n), 1.0, N)
        d.append(energy_equality_defect(traj, disc8.ops, p, quadratic_law(), disc8.trace, np.zeros(disc8.space.n)))
    assert d[0] > d[1] > d[2]


def test_convergence_study_validation(disc8):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    z = np.zeros(disc8.space.n)
    with pytest.raises(ValueError):
        convergence_study(disc8.ops, p, zero_law(), disc8.trace, z, z, 1.0, [10, 20])
    with pytest.raises(ValueError):
        convergence_study(disc8.ops, p, zero_law(), disc8.trace, z, z, 1.0, [10, 20, 30])


@pytest.mark.parametrize("r", [2.0, 3.0, 5.0])
def test_twin_run_bound(disc16_weak, r):
    p = CbfParams(1.0, 0.1, 1.0, r)
    j = heaviside_law()
    f0 = disc16_weak.space.gram_H @ tg(disc16_weak, 3.0)
    bump = interpolate(disc16_weak, lambda x, y: np.cos(2 * np.pi * x) * np.cos(np.pi * y))
    y0 = tg(disc16_weak)
    rep = twin_run_gronwall(disc16_weak.ops, p, j, disc16_weak.trace, (y0, lambda t: t * f0),
                            (y0 + 0.01 * bump, lambda t: 1.01 * t * f0), 1.0, 20)
    assert rep.passed
    assert rep.extra["regime"] == {2.0: "subcritical", 3.0: "critical", 5.0: "supercritical"}[r]


def test_twin_run_skipped_when_mu_too_small(disc16):
    p = CbfParams(0.1, 0.1, 1.0, 3.0)
    z = np.zeros(disc16.space.n)
    rep = twin_run_gronwall(disc16.ops, p, arctan_law(), disc16.trace, (z, z), (z, z), 1.0, 5)
    assert rep.status == "skipped"


def test_inner_failure_raises_with_partial_snapshots(disc8):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    opts = SolveOptions(max_iters=1, newton_tol=1e-15)
    with pytest.raises(RotheError) as info:
        run(disc8.ops, p, arctan_law(), disc8.trace, tg(disc8), np.zeros(disc8.space.n), 1.0, 5, opts, warn=False)
    assert info.value.step == 1
    assert info.value.partial.shape == (1, disc8.space.n)


def test_trajectory_csv(disc8, tmp_path):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    traj = run(disc8.ops, p, zero_law(), disc8.trace, tg(disc8), np.zeros(disc8.space.n), 1.0, 4)
    path = tmp_path / "t.csv"
    traj.write_csv(path, extra={"tag": "x"})
    lines = path.read_text().splitlines()
    assert lines[0] == "tag,i,t,norm_H,norm_V,norm_Lr1,boundary_pairing,identity_residual"
    assert len(lines) == 5
