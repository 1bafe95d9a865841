"""Stream-function discretization of the unit square.

The velocity is y = (ds/dy, -ds/dx), so div y = 0 by construction, and the
homogeneous Neumann closure ds/dn = 0 encodes a vanishing tangential
velocity. The normal velocity on the boundary is then the counter-clockwise
tangential derivative of s, which is what the trace operator returns.

Node (i, j) sits at (i*hx, j*hy) with flat index j*nx + i. Node 0, the
corner (0, 0), is pinned to s = 0 and carries no degree of freedom.

Quadrature uses the four corners of every cell with weight hx*hy/4. At
each corner the velocity is built from the two cell edges meeting there,
which is the bilinear-element gradient sampled at the vertex. A single
cell-centre sample would miss the checkerboard mode entirely and leave
gram_H singular.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .state_space import SpaceSpec
from .operators import OperatorSet, CbfParams, apply_F
from .superpotential import TraceOperator

MIN_NODES = 8


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise ValueError(f"grid needs at least {MIN_NODES} nodes per side, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_dofs(self) -> int:
        return self.n_nodes - 1

    def node(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as flat arrays in node order."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        X, Y = np.meshgrid(x, y)
        return X.ravel(), Y.ravel()

    def boundary_nodes(self) -> np.ndarray:
        """Boundary nodes in counter-clockwise order starting at (0, 0)."""
        nx, ny = self.nx, self.ny
        bottom = [self.node(i, 0) for i in range(nx)]
        right = [self.node(nx - 1, j) for j in range(1, ny)]
        top = [self.node(i, ny - 1) for i in range(nx - 2, -1, -1)]
        left = [self.node(0, j) for j in range(ny - 2, 0, -1)]
        return np.array(bottom + right + top + left, dtype=int)

    def boundary_edge_lengths(self) -> np.ndarray:
        """Length of the edge from boundary node k to node k+1 (cyclic)."""
        nx, ny = self.nx, self.ny
        return np.concatenate([
            np.full(nx - 1, self.hx),
            np.full(ny - 1, self.hy),
            np.full(nx - 1, self.hx),
            np.full(ny - 1, self.hy),
        ])


@dataclass(frozen=True)
class Discretization:
    """Everything assembled for one grid."""

    grid: GridSpec
    space: SpaceSpec
    ops: OperatorSet
    trace: TraceOperator
    prolong: sp.csr_matrix      # dofs -> all nodal stream-function values
    laplacian: sp.csr_matrix    # nodal 5-point Laplacian with Neumann ghosts
    node_weights: np.ndarray    # trapezoidal weights at the nodes


def _second_difference_1d(m: int, h: float) -> sp.csr_matrix:
    """1-D (s[i+1] - 2 s[i] + s[i-1]) / h^2 with ghost reflection at both ends."""
    main = np.full(m, -2.0)
    upper = np.ones(m - 1)
    lower = np.ones(m - 1)
    upper[0] = 2.0   # s[-1] = s[1]
    lower[-1] = 2.0  # s[m] = s[m-2]
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


def _trapezoid_1d(m: int, h: float) -> np.ndarray:
    w = np.full(m, h)
    w[0] = w[-1] = h / 2
    return w


def nodal_operators(grid: GridSpec) -> dict[str, sp.csr_matrix]:
    """Node-level difference matrices acting on all nodal values."""
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    Ix, Iy = sp.identity(nx, format="csr"), sp.identity(ny, format="csr")
    Dxx = sp.kron(Iy, _second_difference_1d(nx, hx), format="csr")
    Dyy = sp.kron(_second_difference_1d(ny, hy), Ix, format="csr")
    # forward differences along each grid line
    fx = sp.diags([-np.ones(nx - 1), np.ones(nx - 1)], [0, 1], shape=(nx - 1, nx)) / hx
    fy = sp.diags([-np.ones(ny - 1), np.ones(ny - 1)], [0, 1], shape=(ny - 1, ny)) / hy
    # mixed derivative at cell centres
    Dxy = sp.kron(fy, fx, format="csr")
    return {"Dxx": Dxx, "Dyy": Dyy, "Dxy": Dxy, "fx": sp.csr_matrix(fx), "fy": sp.csr_matrix(fy)}


def _corner_eval(grid: GridSpec) -> tuple[sp.csr_matrix, sp.csr_matrix, np.ndarray]:
    """ds/dx and ds/dy at the four corners of every cell, and the corner nodes.

    Quadrature points are ordered cell-major, corners (0,0), (1,0), (0,1), (1,1).
    """
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    ci, cj = ci.ravel(), cj.ravel()
    n_cells = ci.size
    rows_x, cols_x, vals_x = [], [], []
    rows_y, cols_y, vals_y = [], [], []
    nodes = np.empty(4 * n_cells, dtype=int)
    for c, (a, b) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
        q = 4 * np.arange(n_cells) + c
        nodes[q] = grid.node(ci + a, cj + b)
        # ds/dx from the horizontal cell edge on row cj + b
        rows_x += [q, q]
        cols_x += [grid.node(ci + 1, cj + b), grid.node(ci, cj + b)]
        vals_x += [np.full(n_cells, 1 / hx), np.full(n_cells, -1 / hx)]
        # ds/dy from the vertical cell edge on column ci + a
        rows_y += [q, q]
        cols_y += [grid.node(ci + a, cj + 1), grid.node(ci + a, cj)]
        vals_y += [np.full(n_cells, 1 / hy), np.full(n_cells, -1 / hy)]
    shape = (4 * n_cells, grid.n_nodes)
    Sx = sp.csr_matrix((np.concatenate(vals_x), (np.concatenate(rows_x), np.concatenate(cols_x))), shape=shape)
    Sy = sp.csr_matrix((np.concatenate(vals_y), (np.concatenate(rows_y), np.concatenate(cols_y))), shape=shape)
    return Sx, Sy, nodes


def prolongation(grid: GridSpec) -> sp.csr_matrix:
    """Map dofs to nodal values, inserting s = 0 at the pinned corner."""
    n = grid.n_dofs
    return sp.csr_matrix((np.ones(n), (np.arange(1, n + 1), np.arange(n))), shape=(grid.n_nodes, n))


def trace_matrix(grid: GridSpec) -> tuple[sp.csr_matrix, np.ndarray]:
    """Nodal trace: counter-clockwise tangential derivative at boundary nodes.

    At node k the value is (s[k+1] - s[k-1]) / (h[k-1] + h[k]), the
    arc-length weighted average of the two adjacent one-sided differences.
    With weights (h[k-1] + h[k]) / 2 the weighted sum telescopes to zero.
    """
    bnodes = grid.boundary_nodes()
    h = grid.boundary_edge_lengths()
    m = bnodes.size
    k = np.arange(m)
    h_prev, h_next = h[(k - 1) % m], h[k]
    denom = h_prev + h_next
    rows = np.concatenate([k, k])
    cols = np.concatenate([bnodes[(k + 1) % m], bnodes[(k - 1) % m]])
    vals = np.concatenate([1 / denom, -1 / denom])
    L = sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.n_nodes))
    return L, denom / 2


def build_space(grid: GridSpec, trace_scale: float = 1.0) -> Discretization:
    """Assemble space, operator skeleton and trace for ``grid``.

    ``trace_scale`` multiplies the trace matrix. It is a coupling knob for
    experiments that need a smaller ||trace|| than the grid produces.
    """
    P = prolongation(grid)
    nodal = nodal_operators(grid)
    Lap = (nodal["Dxx"] + nodal["Dyy"]).tocsr()
    wx = _trapezoid_1d(grid.nx, grid.hx)
    wy = _trapezoid_1d(grid.ny, grid.hy)
    w_node = np.outer(wy, wx).ravel()

    Sx, Sy, qnodes = _corner_eval(grid)
    n_q = qnodes.size
    wq = np.full(n_q, grid.hx * grid.hy / 4)

    Ex = (Sy @ P).tocsr()                # y1 = ds/dy
    Ey = (-(Sx @ P)).tocsr()             # y2 = -ds/dx
    eval_map = sp.vstack([Ex, Ey], format="csr")
    W = sp.diags(wq)
    gram_H = (Ex.T @ W @ Ex + Ey.T @ W @ Ey).tocsr()

    # curl y = -Lap s, sampled at the corner node of each quadrature point
    curl_nodes = (-(Lap @ P)).tocsr()
    curl_map = curl_nodes[qnodes].tocsr()
    gram_V = (curl_map.T @ W @ curl_map).tocsr()

    # H1 of the velocity: |grad y|^2 = s_xx^2 + 2 s_xy^2 + s_yy^2
    Wn = sp.diags(w_node)
    Dxx, Dyy, Dxy = nodal["Dxx"] @ P, nodal["Dyy"] @ P, nodal["Dxy"] @ P
    Wc = sp.identity(Dxy.shape[0]) * (grid.hx * grid.hy)
    gram_H1 = (gram_H + Dxx.T @ Wn @ Dxx + Dyy.T @ Wn @ Dyy + 2 * (Dxy.T @ Wc @ Dxy)).tocsr()

    space = SpaceSpec(
        n=grid.n_dofs,
        gram_H=_symmetrize(gram_H),
        gram_V=_symmetrize(gram_V),
        eval_map=eval_map,
        quad_weights=wq,
        gram_H1=_symmetrize(gram_H1),
    )
    ops = OperatorSet(space=space, curl_map=curl_map)
    Lnodal, wGamma = trace_matrix(grid)
    trace = TraceOperator.build((trace_scale * (Lnodal @ P)).tocsr(), wGamma, space)
    return Discretization(grid=grid, space=space, ops=ops, trace=trace, prolong=P,
                          laplacian=Lap, node_weights=w_node)


def _symmetrize(m: sp.spmatrix) -> sp.csr_matrix:
    # products like A^T W A are symmetric up to rounding; make it exact
    m = sp.csr_matrix(m)
    return ((m + m.T) * 0.5).tocsr()


def interpolate(disc: Discretization, s: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Dof vector of a stream function sampled at the nodes, shifted so the pin holds."""
    X, Y = disc.grid.coords()
    vals = np.asarray(s(X, Y), dtype=float) * np.ones_like(X)
    return vals[1:] - vals[0]


def nodal_stream(disc: Discretization, y: np.ndarray) -> np.ndarray:
    return disc.prolong @ y


def discrete_divergence(disc: Discretization, y: np.ndarray) -> np.ndarray:
    """Cell-wise divergence of the corner velocities, one value per cell.

    Differences the first component along x and the second along y inside
    each cell, using the corner samples.
    """
    g = disc.grid
    u = (disc.space.eval_map @ y).reshape(2, -1)
    u1 = u[0].reshape(-1, 4)
    u2 = u[1].reshape(-1, 4)
    # corners ordered (0,0), (1,0), (0,1), (1,1)
    du1_dx = 0.5 * ((u1[:, 1] - u1[:, 0]) + (u1[:, 3] - u1[:, 2])) / g.hx
    du2_dy = 0.5 * ((u2[:, 2] - u2[:, 0]) + (u2[:, 3] - u2[:, 1])) / g.hy
    return du1_dx + du2_dy


# --- manufactured states ------------------------------------------------------

def _taylor_green(x, y):
    return np.cos(np.pi * x) * np.cos(np.pi * y)


def _shear(x, y):
    return x**2 * (1 - x) ** 2 * y**2 * (1 - y) ** 2


def _zero(x, y):
    return np.zeros_like(x)


MANUFACTURED: dict[str, Callable] = {
    "zero": _zero,
    "taylor-green": _taylor_green,
    "shear": _shear,
}


def manufactured_case(name: str, disc: Discretization, params: CbfParams) -> tuple[np.ndarray, np.ndarray]:
    """Reference state and its exact discrete forcing f = F(y*)."""
    try:
        s = MANUFACTURED[name]
    except KeyError:
        raise ValueError(f"unknown manufactured case {name!r}; choose from {sorted(MANUFACTURED)}") from None
    y_star = interpolate(disc, s)
    return y_star, apply_F(disc.ops, params, y_star)
