"""Discrete function spaces: Gram matrices, nodal quadrature and norms.

A :class:`SpaceSpec` knows nothing about how its matrices were assembled.
States are plain 1-D float arrays of length ``space.n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

State = np.ndarray

EIG_TOL = 1e-8


@dataclass(frozen=True)
class SpaceSpec:
    """Discrete H / V / L^p structure.

    ``eval_map`` has shape ``(2 * n_q, n)``: rows ``[:n_q]`` give the first
    velocity component at the quadrature nodes, rows ``[n_q:]`` the second.
    """

    n: int
    gram_H: sp.csr_matrix
    gram_V: sp.csr_matrix
    eval_map: sp.csr_matrix
    quad_weights: np.ndarray
    gram_H1: Optional[sp.csr_matrix] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        for name in ("gram_H", "gram_V"):
            m = getattr(self, name)
            if m.shape != (self.n, self.n):
                raise ValueError(f"{name} has shape {m.shape}, expected {(self.n, self.n)}")
        if self.eval_map.shape[1] != self.n or self.eval_map.shape[0] % 2:
            raise ValueError("eval_map must have shape (2*n_q, n)")
        if self.eval_map.shape[0] // 2 != self.quad_weights.shape[0]:
            raise ValueError("quad_weights length does not match eval_map")
        if np.any(self.quad_weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def n_q(self) -> int:
        return int(self.quad_weights.shape[0])

    @property
    def area(self) -> float:
        return float(self.quad_weights.sum())

    def lu_V(self):
        """Cached sparse LU factorization of gram_V."""
        if "lu_V" not in self._cache:
            self._cache["lu_V"] = splu(sp.csc_matrix(self.gram_V))
        return self._cache["lu_V"]


def check_state(space: SpaceSpec, y: State) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != space.n:
        raise ValueError(f"state has shape {y.shape}, expected ({space.n},)")
    if not np.all(np.isfinite(y)):
        raise ValueError("state has non-finite entries")
    return y


def velocity(space: SpaceSpec, y: State) -> np.ndarray:
    """Velocity 2-vectors at the quadrature nodes, shape ``(2, n_q)``."""
    y = check_state(space, y)
    return (space.eval_map @ y).reshape(2, space.n_q)


def inner_H(space: SpaceSpec, y: State, z: State) -> float:
    return float(check_state(space, y) @ (space.gram_H @ check_state(space, z)))


def inner_V(space: SpaceSpec, y: State, z: State) -> float:
    return float(check_state(space, y) @ (space.gram_V @ check_state(space, z)))


def norm_H(space: SpaceSpec, y: State) -> float:
    return float(np.sqrt(max(inner_H(space, y, y), 0.0)))


def norm_V(space: SpaceSpec, y: State) -> float:
    return float(np.sqrt(max(inner_V(space, y, y), 0.0)))


def norm_Lp(space: SpaceSpec, y: State, p: float) -> float:
    """(sum_q w_q |y(x_q)|^p)^(1/p) with the Euclidean magnitude at each node."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    mag = np.hypot(*velocity(space, y))
    return float(np.sum(space.quad_weights * mag**p) ** (1.0 / p))


def dual_norm_V(space: SpaceSpec, f: np.ndarray) -> float:
    """sqrt(f^T gram_V^{-1} f) through the cached factorization."""
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n,):
        raise ValueError("dual vector has wrong length")
    return float(np.sqrt(max(f @ space.lu_V().solve(f), 0.0)))


def generalized_extreme_eig(
    K: sp.spmatrix,
    M: sp.spmatrix,
    *,
    largest: bool = True,
    tol: float = EIG_TOL,
    maxiter: int = 2000,
    seed: int = 0,
    M_lu=None,
) -> float:
    """Extreme eigenvalue of ``K v = lam M v`` by power or inverse iteration.

    ``M`` must be SPD and ``K`` symmetric positive semidefinite. For the
    smallest eigenvalue ``K`` must be SPD as well. Stops when successive
    Rayleigh quotients agree to ``tol`` relative.
    """
    n = K.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    if largest:
        lu = M_lu if M_lu is not None else splu(sp.csc_matrix(M))
        step = lambda x: lu.solve(K @ x)  # noqa: E731
    else:
        lu = splu(sp.csc_matrix(K))
        step = lambda x: lu.solve(M @ x)  # noqa: E731
    lam_old = np.inf
    lam = np.nan
    for _ in range(maxiter):
        v = step(v)
        nrm = np.sqrt(v @ (M @ v))
        if nrm == 0.0:
            return 0.0
        v /= nrm
        lam = float(v @ (K @ v))
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    return lam


def norm_equivalence_constants(space: SpaceSpec, tol: float = EIG_TOL) -> tuple[float, float]:
    """(c_low, c_high) with c_low ||y||_V <= ||y||_H1 <= c_high ||y||_V."""
    if space.gram_H1 is None:
        raise ValueError("space carries no H1 Gram matrix")
    lam_max = generalized_extreme_eig(space.gram_H1, space.gram_V, largest=True, tol=tol,
                                      M_lu=space.lu_V())
    lam_min = generalized_extreme_eig(space.gram_H1, space.gram_V, largest=False, tol=tol)
    return float(np.sqrt(lam_min)), float(np.sqrt(lam_max))


def poincare_constant(space: SpaceSpec, tol: float = EIG_TOL) -> float:
    """Smallest c with ||y||_H <= c ||y||_V on the discrete space."""
    lam = generalized_extreme_eig(space.gram_H, space.gram_V, largest=True, tol=tol,
                                  M_lu=space.lu_V())
    return float(np.sqrt(lam))


def check_gram_matrices(space: SpaceSpec, rtol: float = 1e-14) -> dict:
    """Symmetry defect and positivity of gram_H and gram_V.

    Positivity is tested with a sparse Cholesky-free route: the LU pivots of
    an SPD matrix factorized without permutation are all positive.
    """
    out = {}
    for name in ("gram_H", "gram_V"):
        m = sp.csr_matrix(getattr(space, name))
        scale = abs(m).max()
        asym = abs(m - m.T).max() if m.nnz else 0.0
        lu = splu(sp.csc_matrix(m), permc_spec="NATURAL", diag_pivot_thresh=0.0)
        diag = lu.U.diagonal()
        out[name] = {
            "symmetric": bool(asym <= rtol * scale),
            "asym": float(asym),
            "positive_definite": bool(np.all(diag > 0)),
        }
    return out


# --- text serialization -------------------------------------------------------
#
# Layout:
#   %%SpaceSpec 1
#   n n_q
#   %%matrix <name> <rows> <cols> <nnz>      then nnz lines "i j value" (0-based)
#   ... for gram_H, gram_V, eval_map and optionally gram_H1
#   %%vector quad_weights <n_q>              then n_q lines "value"
#   %%end

_HEADER = "%%SpaceSpec 1"


def _write_matrix(fh, name: str, m: sp.spmatrix) -> None:
    c = sp.coo_matrix(m)
    fh.write(f"%%matrix {name} {c.shape[0]} {c.shape[1]} {c.nnz}\n")
    for i, j, v in zip(c.row, c.col, c.data):
        fh.write(f"{i} {j} {float(v)!r}\n")


def save_space(space: SpaceSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(_HEADER + "\n")
        fh.write(f"{space.n} {space.n_q}\n")
        _write_matrix(fh, "gram_H", space.gram_H)
        _write_matrix(fh, "gram_V", space.gram_V)
        _write_matrix(fh, "eval_map", space.eval_map)
        if space.gram_H1 is not None:
            _write_matrix(fh, "gram_H1", space.gram_H1)
        fh.write(f"%%vector quad_weights {space.n_q}\n")
        for w in space.quad_weights:
            fh.write(f"{float(w)!r}\n")
        fh.write("%%end\n")


def load_space(path: str | Path) -> SpaceSpec:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise ValueError("not a SpaceSpec file")
    n, n_q = (int(t) for t in lines[1].split())
    mats: dict[str, sp.csr_matrix] = {}
    weights = None
    pos = 2
    while pos < len(lines):
        head = lines[pos].split()
        pos += 1
        if head[0] == "%%matrix":
            name, rows, cols, nnz = head[1], int(head[2]), int(head[3]), int(head[4])
            block = np.loadtxt(lines[pos:pos + nnz], ndmin=2) if nnz else np.zeros((0, 3))
            pos += nnz
            mats[name] = sp.csr_matrix(
                (block[:, 2], (block[:, 0].astype(int), block[:, 1].astype(int))),
                shape=(rows, cols),
            )
        elif head[0] == "%%vector":
            count = int(head[2])
            weights = np.array([float(t) for t in lines[pos:pos + count]])
            pos += count
        elif head[0] == "%%end":
            break
        else:
            raise ValueError(f"unexpected section {head[0]!r}")
    if weights is None or weights.shape[0] != n_q:
        raise ValueError("missing or malformed weight vector")
    return SpaceSpec(
        n=n,
        gram_H=mats["gram_H"],
        gram_V=mats["gram_V"],
        eval_map=mats["eval_map"],
        quad_weights=weights,
        gram_H1=mats.get("gram_H1"),
    )
