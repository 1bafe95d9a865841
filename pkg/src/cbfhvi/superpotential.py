"""Boundary superpotentials, their Clarke subdifferentials and the trace.

A law is given by its derivative g = j' on the pieces between breakpoints.
At a breakpoint the Clarke subdifferential is the interval spanned by the
two one-sided limits of g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from .operators import CbfParams, ThresholdReport, compute_thresholds
from .state_space import EIG_TOL, SpaceSpec, generalized_extreme_eig

GROWTH_SLACK = 1e-12
MONOTONE_SLACK = 1e-10
# points this close to a breakpoint get the breakpoint's Clarke interval
BREAKPOINT_SNAP = 1e-10

Fn = Callable[[np.ndarray], np.ndarray]


class HypothesisViolation(ValueError):
    """A declared constant of a superpotential is contradicted numerically."""

    def __init__(self, message: str, estimate: float, declared: float):
        super().__init__(message)
        self.estimate = estimate
        self.declared = declared


@dataclass(frozen=True)
class Piece:
    g: Fn
    dg: Fn
    antiderivative: Optional[Fn] = None


@dataclass(frozen=True)
class Superpotential:
    """Piecewise-C1 law. ``pieces[k]`` covers (breakpoints[k-1], breakpoints[k])."""

    pieces: tuple[Piece, ...]
    breakpoints: tuple[float, ...]
    C0: float
    m: float
    name: str = "custom"
    _anchor: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise ValueError("need exactly one more piece than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if self.C0 < 0 or self.m < 0:
            raise ValueError("C0 and m must be nonnegative")

    @property
    def g_pieces(self):
        """(interval, derivative) pairs covering the real line."""
        edges = (-math.inf,) + self.breakpoints + (math.inf,)
        return [((edges[k], edges[k + 1]), p.g) for k, p in enumerate(self.pieces)]

    def piece_index(self, xi: np.ndarray) -> np.ndarray:
        # a breakpoint itself belongs to the piece on its right
        return np.searchsorted(np.asarray(self.breakpoints), xi, side="right")

    def _eval(self, attr: str, xi: np.ndarray, idx: np.ndarray) -> np.ndarray:
        out = np.empty_like(xi, dtype=float)
        for k, p in enumerate(self.pieces):
            mask = idx == k
            if np.any(mask):
                out[mask] = getattr(p, attr)(xi[mask])
        return out

    def g(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return self._eval("g", xi, self.piece_index(xi))

    def dg(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return self._eval("dg", xi, self.piece_index(xi))

    def one_sided(self, k: int) -> tuple[float, float]:
        """(left, right) limits of g at breakpoint k."""
        b = np.array([self.breakpoints[k]])
        return float(self.pieces[k].g(b)[0]), float(self.pieces[k + 1].g(b)[0])

    def jumps(self) -> list[float]:
        return [right - left for left, right in (self.one_sided(k) for k in range(len(self.breakpoints)))]

    # -- j reconstructed from g with j(0) = 0

    def _piece_integral(self, k: int, a: float, b: float) -> float:
        p = self.pieces[k]
        if p.antiderivative is not None:
            G = p.antiderivative
            return float(G(np.array([b]))[0] - G(np.array([a]))[0])
        return float(quad(lambda t: float(p.g(np.array([t]))[0]), a, b)[0])

    def _breakpoint_values(self) -> np.ndarray:
        if "jb" not in self._anchor:
            bps = self.breakpoints
            vals = np.zeros(len(bps))
            k0 = int(self.piece_index(np.array([0.0]))[0])
            # walk right from 0
            prev, acc = 0.0, 0.0
            for k in range(k0, len(bps)):
                acc += self._piece_integral(k, prev, bps[k])
                vals[k] = acc
                prev = bps[k]
            # walk left from 0
            prev, acc = 0.0, 0.0
            for k in range(k0 - 1, -1, -1):
                acc += self._piece_integral(k + 1, prev, bps[k])
                vals[k] = acc
                prev = bps[k]
            self._anchor["jb"] = vals
        return self._anchor["jb"]

    def j(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        idx = self.piece_index(xi)
        jb = self._breakpoint_values()
        k0 = int(self.piece_index(np.array([0.0]))[0])
        out = np.empty_like(xi)
        for n, (x, k) in enumerate(zip(xi, idx)):
            if k == k0:
                base, start = 0.0, 0.0
            elif k > k0:
                base, start = jb[k - 1], self.breakpoints[k - 1]
            else:
                base, start = jb[k], self.breakpoints[k]
            out[n] = base + self._piece_integral(k, start, x)
        return out


# --- Clarke subdifferential and smoothing ----------------------------------------

def subdiff(j: Superpotential, xi: float, snap: float = 0.0) -> tuple[float, float]:
    """Clarke interval [lo, hi] at ``xi``."""
    lo, hi = subdiff_bounds(j, np.array([xi], dtype=float), snap=snap)
    return float(lo[0]), float(hi[0])


def subdiff_bounds(j: Superpotential, xi: np.ndarray, snap: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Clarke interval bounds."""
    xi = np.asarray(xi, dtype=float)
    val = j.g(xi)
    lo, hi = val.copy(), val.copy()
    for k, b in enumerate(j.breakpoints):
        at = np.abs(xi - b) <= snap
        if np.any(at):
            left, right = j.one_sided(k)
            lo[at] = min(left, right)
            hi[at] = max(left, right)
    return lo, hi


def _check_eps(j: Superpotential, eps: float) -> None:
    if not eps > 0:
        raise ValueError("eps must be positive")
    bps = j.breakpoints
    if any(b2 - b1 <= 2 * eps for b1, b2 in zip(bps, bps[1:])):
        raise ValueError(f"eps = {eps} makes smoothing windows of neighbouring breakpoints overlap")


def smoothed_g(j: Superpotential, xi: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """g_eps and its derivative: g linearly interpolated across [b - eps, b + eps]."""
    _check_eps(j, eps)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    val = j.g(xi)
    der = j.dg(xi)
    for k, b in enumerate(j.breakpoints):
        near = np.abs(xi - b) < eps
        if np.any(near):
            g_lo = float(j.pieces[k].g(np.array([b - eps]))[0])
            g_hi = float(j.pieces[k + 1].g(np.array([b + eps]))[0])
            slope = (g_hi - g_lo) / (2 * eps)
            val[near] = g_lo + slope * (xi[near] - (b - eps))
            der[near] = slope
    return val, der


def smoothed_subdiff(j: Superpotential, xi: float, eps: float) -> float:
    return float(smoothed_g(j, np.array([xi]), eps)[0][0])


# --- induced functional --------------------------------------------------------------

def J_value(j: Superpotential, tr: "TraceOperator", u: np.ndarray) -> float:
    """sum_i wGamma_i j(u_i)."""
    u = np.asarray(u, dtype=float)
    if u.shape != tr.wGamma.shape:
        raise ValueError("boundary vector has wrong length")
    return float(tr.wGamma @ j.j(u))


# --- hypothesis checks ----------------------------------------------------------------

def default_grid(j: Superpotential, span: float = 10.0, n: int = 801) -> np.ndarray:
    pts = [np.linspace(-span, span, n)]
    offsets = np.logspace(-6, -1, 11)
    for b in j.breakpoints:
        pts.append(np.array([b]))
        pts.append(b + offsets)
        pts.append(b - offsets)
    return np.unique(np.concatenate(pts))


def _samples(j: Superpotential, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(xi, zeta) pairs covering every Clarke interval endpoint on the grid."""
    grid = np.unique(np.concatenate([np.asarray(grid, dtype=float), np.asarray(j.breakpoints, dtype=float)]))
    lo, hi = subdiff_bounds(j, grid)
    multi = lo != hi
    xi = np.concatenate([grid, grid[multi]])
    zeta = np.concatenate([lo, hi[multi]])
    return xi, zeta


def growth_estimate(j: Superpotential, grid: np.ndarray) -> float:
    """max |zeta| / (1 + |xi|) over the grid and interval endpoints."""
    if len(grid) == 0:
        raise ValueError("empty grid")
    xi, zeta = _samples(j, grid)
    return float(np.max(np.abs(zeta) / (1 + np.abs(xi))))


def estimate_growth(j: Superpotential, grid: np.ndarray) -> float:
    est = growth_estimate(j, grid)
    if est > j.C0 + GROWTH_SLACK:
        raise HypothesisViolation(f"{j.name}: growth estimate {est:.6g} exceeds declared C0 = {j.C0}", est, j.C0)
    return est


def relaxed_monotonicity_estimate(j: Superpotential, grid: np.ndarray) -> float:
    """max(0, -min (zeta1 - zeta2)(xi1 - xi2) / |xi1 - xi2|^2) over all sample pairs."""
    xi, zeta = _samples(j, grid)
    dx = xi[:, None] - xi[None, :]
    dz = zeta[:, None] - zeta[None, :]
    mask = dx != 0
    q = np.where(mask, dz * dx / np.where(mask, dx * dx, 1.0), np.inf)
    return float(max(0.0, -q.min()))


def estimate_relaxed_monotonicity(j: Superpotential, grid: np.ndarray) -> float:
    est = relaxed_monotonicity_estimate(j, grid)
    if est > j.m + MONOTONE_SLACK:
        raise HypothesisViolation(
            f"{j.name}: relaxed-monotonicity estimate {est:.6g} exceeds declared m = {j.m}", est, j.m)
    return est


def monotonicity_profile(j: Superpotential, gaps: Sequence[float], span: float = 10.0) -> list[tuple[float, float]]:
    """m_hat on grids that include pairs straddling each breakpoint at the given gap.

    A downward jump makes m_hat grow like 1/gap.
    """
    out = []
    for gap in gaps:
        grid = [np.linspace(-span, span, 201)]
        for b in j.breakpoints:
            grid.append(np.array([b - gap, b, b + gap]))
        out.append((float(gap), relaxed_monotonicity_estimate(j, np.concatenate(grid))))
    return out


def verify_hypotheses(j: Superpotential, grid: Optional[np.ndarray] = None) -> dict:
    """Run both estimates; never raises, reports acceptance instead."""
    grid = default_grid(j) if grid is None else grid
    c0_hat = growth_estimate(j, grid)
    m_hat = relaxed_monotonicity_estimate(j, grid)
    upward = all(jump >= 0 for jump in j.jumps())
    return {
        "name": j.name,
        "C0": j.C0,
        "C0_hat": c0_hat,
        "m": j.m,
        "m_hat": m_hat,
        "upward_jumps": upward,
        "accepted": bool(c0_hat <= j.C0 + GROWTH_SLACK and m_hat <= j.m + MONOTONE_SLACK and upward),
    }


def C1_constant(C0: float, gamma_measure: float) -> float:
    """sqrt(2) C0 max(sqrt(meas Gamma), 1)."""
    if C0 < 0 or not gamma_measure > 0:
        raise ValueError("need C0 >= 0 and gamma_measure > 0")
    return math.sqrt(2) * C0 * max(math.sqrt(gamma_measure), 1.0)


# --- shipped laws ------------------------------------------------------------------------

def _const(c):
    return lambda x: np.full_like(x, c, dtype=float)


def zero_law() -> Superpotential:
    return Superpotential((Piece(_const(0.0), _const(0.0), _const(0.0)),), (), C0=0.0, m=0.0, name="zero")


def quadratic_law(scale: float = 1.0) -> Superpotential:
    """j = scale xi^2 / 2."""
    return Superpotential(
        (Piece(lambda x: scale * x, _const(scale), lambda x: 0.5 * scale * x**2),),
        (), C0=abs(scale), m=0.0, name="quadratic")


def arctan_law() -> Superpotential:
    """g = xi - 2 arctan(xi): smooth and nonconvex with inf g' = -1."""
    return Superpotential(
        (Piece(lambda x: x - 2 * np.arctan(x),
               lambda x: 1 - 2 / (1 + x**2),
               lambda x: 0.5 * x**2 - 2 * (x * np.arctan(x) - 0.5 * np.log1p(x**2))),),
        (), C0=math.pi, m=1.0, name="arctan")


def _jump_law(sign: float, name: str, C0: float, m: float) -> Superpotential:
    left = Piece(lambda x: x, _const(1.0), lambda x: 0.5 * x**2)
    right = Piece(lambda x: x + sign, _const(1.0), lambda x: 0.5 * x**2 + sign * x)
    return Superpotential((left, right), (0.0,), C0=C0, m=m, name=name)


def heaviside_law() -> Superpotential:
    """g = xi + H(xi): upward jump, monotone, multivalued at 0."""
    return _jump_law(1.0, "heaviside", C0=1.0, m=0.0)


def downward_jump_law(declared_m: float = 0.0) -> Superpotential:
    """g = xi - H(xi): violates relaxed monotonicity for every finite m."""
    return _jump_law(-1.0, "downward-jump", C0=1.0, m=declared_m)


def polynomial_law(breakpoints: Sequence[float], coeffs: Sequence[Sequence[float]], C0: float, m: float,
                   name: str = "table") -> Superpotential:
    """Piecewise polynomial g; ``coeffs[k]`` lists ascending coefficients of piece k."""
    pieces = []
    for c in coeffs:
        P = Polynomial(np.asarray(c, dtype=float))
        pieces.append(Piece(P, P.deriv(), P.integ()))
    return Superpotential(tuple(pieces), tuple(float(b) for b in breakpoints), C0=C0, m=m, name=name)


def load_table(path: str | Path) -> Superpotential:
    """Read a piecewise-polynomial law from text.

    Format (``#`` starts a comment)::

        name  my-law
        C0    2.0
        m     0.5
        breakpoints  -1.0  1.0
        piece  0.0 1.0          # ascending coefficients, one line per piece
        piece  0.5 1.0
        piece  1.0 1.0
    """
    meta: dict[str, str] = {}
    bps: list[float] = []
    coeffs: list[list[float]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key == "breakpoints":
            bps = [float(t) for t in rest]
        elif key == "piece":
            coeffs.append([float(t) for t in rest])
        elif key in ("name", "C0", "m"):
            meta[key] = rest[0]
        else:
            raise ValueError(f"unknown key {key!r} in law table")
    if "C0" not in meta or "m" not in meta:
        raise ValueError("law table needs C0 and m")
    return polynomial_law(bps, coeffs, float(meta["C0"]), float(meta["m"]), meta.get("name", "table"))


LAWS: dict[str, Callable[..., Superpotential]] = {
    "zero": zero_law,
    "quadratic": quadratic_law,
    "arctan": arctan_law,
    "heaviside": heaviside_law,
    "downward-jump": downward_jump_law,
}


def make_law(name: str, *args: float) -> Superpotential:
    try:
        return LAWS[name](*args)
    except KeyError:
        raise ValueError(f"unknown superpotential {name!r}; choose from {sorted(LAWS)}") from None


# --- trace operator ----------------------------------------------------------------------

@dataclass(frozen=True)
class TraceOperator:
    L: sp.csr_matrix
    wGamma: np.ndarray
    op_norm: float
    space: Optional[SpaceSpec] = field(default=None, repr=False, compare=False)

    @classmethod
    def build(cls, L: sp.spmatrix, wGamma: np.ndarray, space: SpaceSpec) -> "TraceOperator":
        L = sp.csr_matrix(L)
        wGamma = np.asarray(wGamma, dtype=float)
        if np.any(wGamma <= 0):
            raise ValueError("boundary weights must be positive")
        return cls(L=L, wGamma=wGamma, op_norm=trace_norm(L, wGamma, space), space=space)

    @property
    def n_U(self) -> int:
        return int(self.wGamma.shape[0])

    @property
    def measure(self) -> float:
        return float(self.wGamma.sum())

    def apply(self, y: np.ndarray) -> np.ndarray:
        return self.L @ y

    def adjoint(self, eta: np.ndarray) -> np.ndarray:
        """l^* eta as a dual vector, with U' identified with U through wGamma."""
        return self.L.T @ (self.wGamma * eta)

    def pairing(self, eta: np.ndarray, u: np.ndarray) -> float:
        return float(np.sum(self.wGamma * eta * u))

    def norm_U(self, u: np.ndarray) -> float:
        return float(np.sqrt(self.pairing(u, u)))

    def gram(self) -> sp.csr_matrix:
        return (self.L.T @ sp.diags(self.wGamma) @ self.L).tocsr()


def trace_norm(L: sp.spmatrix, wGamma: np.ndarray, space: SpaceSpec, tol: float = EIG_TOL,
               maxiter: int = 200) -> float:
    """||l|| from V to U: sqrt of the top eigenvalue of L^T W L against gram_V."""
    K = (L.T @ sp.diags(wGamma) @ L).tocsr()
    if K.nnz == 0:
        return 0.0
    lam = generalized_extreme_eig(K, space.gram_V, largest=True, tol=tol, maxiter=maxiter,
                                  M_lu=space.lu_V())
    return float(np.sqrt(max(lam, 0.0)))


def thresholds(p: CbfParams, tr: TraceOperator, j: Superpotential, f_dual: float = 0.0,
               generic_C: float = 1.0) -> ThresholdReport:
    """Threshold report with C_psi from the law's growth constant and |Gamma|."""
    C_psi = C1_constant(j.C0, tr.measure)
    return compute_thresholds(p, C_psi, tr.op_norm, j.m, f_dual=f_dual, generic_C=generic_C)
