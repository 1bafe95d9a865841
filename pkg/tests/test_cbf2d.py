import numpy as np
import pytest
import scipy.linalg as sl

from cbfhvi.cbf2d import (GridSpec, build_space, discrete_divergence, interpolate, manufactured_case,
                          nodal_stream)
from cbfhvi.operators import CbfParams, apply_F


def test_grid_validation_and_geometry():
    with pytest.raises(ValueError):
        GridSpec(4, 16)
    g = GridSpec(8, 10)
    assert g.n_dofs == 79
    b = g.boundary_nodes()
    assert b.size == 2 * (8 - 1) + 2 * (10 - 1)
    assert len(set(b.tolist())) == b.size
    assert g.boundary_edge_lengths().sum() == pytest.approx(4.0)


def test_pin_and_interpolation(disc8):
    y = interpolate(disc8, lambda x, yy: 3.0 + x + 2 * yy)
    s = nodal_stream(disc8, y)
    assert s[0] == 0.0
    X, Y = disc8.grid.coords()
    assert np.allclose(s, X + 2 * Y)


def test_linear_stream_gives_constant_velocity(disc8):
    # s = x - 2 y  =>  velocity (ds/dy, -ds/dx) = (-2, -1)
    y = interpolate(disc8, lambda x, yy: x - 2 * yy)
    u = (disc8.space.eval_map @ y).reshape(2, -1)
    assert np.allclose(u[0], -2.0) and np.allclose(u[1], -1.0)


def test_trace_is_normal_velocity_away_from_corners(disc8):
    # s = x: velocity (0, -1); outward normal component +1 at the bottom, -1 at the top, 0 on the sides
    g = disc8.grid
    y = interpolate(disc8, lambda x, yy: x)
    un = disc8.trace.apply(y)
    nodes = g.boundary_nodes()
    X, Y = g.coords()
    xb, yb = X[nodes], Y[nodes]
    corner = (np.isclose(xb, 0) | np.isclose(xb, 1)) & (np.isclose(yb, 0) | np.isclose(yb, 1))
    expect = np.where(np.isclose(yb, 0), 1.0, np.where(np.isclose(yb, 1), -1.0, 0.0))
    assert np.allclose(un[~corner], expect[~corner])


def test_divergence_free_by_construction(disc16, rng):
    y = rng.standard_normal(disc16.space.n)
    div = discrete_divergence(disc16, y)
    assert np.max(np.abs(div)) <= 1e-10 * np.max(np.abs(disc16.space.eval_map @ y))


def test_trace_norm_matches_dense_oracle(disc16, disc16_weak):
    # frozen from a dense generalized eigensolve on 16x16
    assert disc16.trace.op_norm == pytest.approx(0.476319575591, rel=1e-7)
    assert disc16_weak.trace.op_norm == pytest.approx(0.0952639151183, rel=1e-7)
    assert disc16.trace.measure == pytest.approx(4.0)
    K = disc16.trace.gram().toarray()
    lam = sl.eigh(K, disc16.space.gram_V.toarray(), eigvals_only=True)
    assert disc16.trace.op_norm == pytest.approx(np.sqrt(lam[-1]), rel=1e-7)


def test_trace_adjoint(disc8, rng):
    tr = disc8.trace
    y = rng.standard_normal(disc8.space.n)
    eta = rng.standard_normal(tr.n_U)
    assert tr.adjoint(eta) @ y == pytest.approx(tr.pairing(eta, tr.apply(y)), rel=1e-12)


@pytest.mark.parametrize("case", ["zero", "taylor-green", "shear"])
def test_manufactured_forcing_is_F_of_reference(disc8, case):
    p = CbfParams(1.0, 0.1, 1.0, 3.0)
    y_star, f = manufactured_case(case, disc8, p)
    assert np.array_equal(f, apply_F(disc8.ops, p, y_star))
    with pytest.raises(ValueError):
        manufactured_case("nope", disc8, p)


def test_gram_V_is_curl_form(disc8, rng):
    y = rng.standard_normal(disc8.space.n)
    om = disc8.ops.curl(y)
    assert y @ (disc8.space.gram_V @ y) == pytest.approx(np.sum(disc8.space.quad_weights * om**2), rel=1e-12)


def test_curl_of_taylor_green(disc16):
    # -Lap(cos cos) = 2 pi^2 cos cos at interior nodes, up to O(h^2)
    y = interpolate(disc16, lambda x, yy: np.cos(np.pi * x) * np.cos(np.pi * yy))
    om = -(disc16.laplacian @ nodal_stream(disc16, y))
    X, Y = disc16.grid.coords()
    exact = 2 * np.pi**2 * np.cos(np.pi * X) * np.cos(np.pi * Y)
    assert np.max(np.abs(om - exact)) < 0.1
