"""Stationary inclusion F(y) + l^*(dj(l y)) contains f.

Strategy: continuation in a smoothing parameter eps with damped Newton on
    G_eps(y) = F(y) + shift M y + l^T (wGamma * g_eps(l y)) - f
followed, for laws with jumps, by an active-set polish that pins the
boundary nodes sitting on a breakpoint and solves for their multipliers.
The polished multiplier lies in the Clarke interval exactly, so the
returned pair satisfies the inclusion without a smoothing residual.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve

from .operators import B_jacobian, C_jacobian, CbfParams, OperatorSet, apply_B, apply_C, apply_F
from .reports import CheckReport, le_check
from .state_space import dual_norm_V, norm_Lp, norm_V
from .superpotential import (BREAKPOINT_SNAP, Superpotential, TraceOperator, smoothed_g, subdiff_bounds,
                             thresholds)

log = logging.getLogger(__name__)

INCLUSION_TOL = 1e-8


@dataclass(frozen=True)
class SolveOptions:
    eps_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    newton_tol: float = 1e-10
    max_iters: int = 200
    damping: float = 1.0
    picard: bool = False
    polish_rounds: int = 20

    def __post_init__(self):
        eps = self.eps_schedule
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_schedule must be positive and strictly decreasing")
        if not self.newton_tol > 0 or self.max_iters < 1:
            raise ValueError("newton_tol and max_iters must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class IterationRecord:
    stage: str
    eps: float
    iterate: int
    residual: float
    step_norm: float
    step_length: float


@dataclass
class StationarySolveReport:
    y: np.ndarray
    eta: np.ndarray
    residual: float
    converged: bool
    iterations: dict[str, int] = field(default_factory=dict)
    history: list[IterationRecord] = field(default_factory=list)
    sticking: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    message: str = ""

    def write_csv(self, path: str | Path, extra: Optional[dict] = None) -> None:
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(extra) + ["stage", "eps", "iterate", "residual", "step_norm", "step_length"])
            for h in self.history:
                w.writerow(list(extra.values()) + [h.stage, repr(h.eps), h.iterate, repr(h.residual),
                                                   repr(h.step_norm), repr(h.step_length)])


class _System:
    """Residual and Jacobian of the smoothed problem with a fixed mass shift."""

    def __init__(self, ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator,
                 f: np.ndarray, shift: float):
        self.ops, self.p, self.j, self.tr, self.f, self.shift = ops, p, j, tr, f, shift
        self.linear_part = (p.mu * ops.A + (p.alpha + shift) * ops.mass).tocsr()

    def F(self, y):
        p = self.p
        out = self.linear_part @ y
        if p.convection:
            out = out + apply_B(self.ops, y, y)
        if p.beta:
            out = out + p.beta * apply_C(self.ops, y, p.r)
        return out

    def JF(self, y, picard_ref=None):
        p = self.p
        J = self.linear_part
        if p.convection:
            if picard_ref is None:
                J = J + B_jacobian(self.ops, y)
            else:
                J = J + _frozen_B_matrix(self.ops, picard_ref)
        if p.beta:
            J = J + p.beta * C_jacobian(self.ops, y, p.r)
        return sp.csr_matrix(J)

    def smoothed(self, y, eps):
        u = self.tr.apply(y)
        ge, dge = smoothed_g(self.j, u, eps)
        res = self.F(y) + self.tr.adjoint(ge) - self.f
        return res, ge, dge


def _frozen_B_matrix(ops: OperatorSet, y_ref: np.ndarray) -> sp.csr_matrix:
    """Matrix of d -> B(y_ref, d): convection frozen at y_ref."""
    Ex, Ey = ops.split_eval()
    ExT, EyT = ops._transposes()
    w = ops.space.quad_weights
    om = ops.curl(y_ref)
    return (EyT @ sp.diags(w * om) @ Ex - ExT @ sp.diags(w * om) @ Ey).tocsr()


def _newton_stage(sys_: _System, y: np.ndarray, eps: float, opts: SolveOptions, stage: str,
                  history: list) -> tuple[np.ndarray, float, int, bool]:
    res, _, dg = sys_.smoothed(y, eps)
    rn = float(np.linalg.norm(res))
    it = 0
    history.append(IterationRecord(stage, eps, 0, rn, 0.0, 0.0))
    picard = opts.picard
    while rn > opts.newton_tol and it < opts.max_iters:
        it += 1
        tr = sys_.tr
        J = sys_.JF(y, picard_ref=y if picard else None) + tr.L.T @ sp.diags(tr.wGamma * dg) @ tr.L
        try:
            delta = spsolve(sp.csc_matrix(J), -res)
        except RuntimeError:
            delta = np.full_like(y, np.nan)
        if not np.all(np.isfinite(delta)):
            if not picard:
                picard = True
                continue
            return y, rn, it, False
        t = opts.damping
        accepted = False
        while t >= 1e-12:
            y_try = y + t * delta
            res_try, _, dg_try = sys_.smoothed(y_try, eps)
            rn_try = float(np.linalg.norm(res_try))
            if rn_try < rn:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no reduction along a Newton direction: rounding floor or stall
            history.append(IterationRecord(stage, eps, it, rn, float(np.linalg.norm(delta)), 0.0))
            return y, rn, it, rn <= opts.newton_tol
        y, res, dg, rn = y_try, res_try, dg_try, rn_try
        history.append(IterationRecord(stage, eps, it, rn, float(t * np.linalg.norm(delta)), t))
    return y, rn, it, rn <= opts.newton_tol


def _polish(sys_: _System, y: np.ndarray, eps: float, opts: SolveOptions, history: list,
            active_guess: Optional[np.ndarray] = None):
    """Active-set solve with nodes on a breakpoint pinned there.

    Returns (y, eta, residual, sticking indices, ok, iterations).
    """
    j, tr = sys_.j, sys_.tr
    bps = np.asarray(j.breakpoints)
    jumps = np.asarray(j.jumps())
    u = tr.apply(y)
    # nearest jump breakpoint for every boundary node
    near_k = np.argmin(np.abs(u[:, None] - bps[None, :]), axis=1)
    if active_guess is None:
        active = (np.abs(u - bps[near_k]) < eps) & (jumps[near_k] != 0)
    else:
        active = np.zeros(tr.n_U, dtype=bool)
        active[active_guess] = True
        active &= jumps[near_k] != 0
    side = np.sign(u - bps[near_k])
    iters = 0
    for _ in range(opts.polish_rounds):
        S = np.flatnonzero(active)
        y, eta, rn, it, ok = _pinned_newton(sys_, y, S, bps[near_k[S]], side, near_k, opts, history)
        iters += it
        if not ok:
            return y, eta, rn, S, False, iters
        lo, hi = subdiff_bounds(j, bps[near_k[S]], snap=0.0)
        eta[S] = _center_in_box(tr, S, eta[S], lo, hi)
        leave = (eta[S] < lo - INCLUSION_TOL) | (eta[S] > hi + INCLUSION_TOL)
        u = tr.apply(y)
        free = ~active
        new_side = np.sign(u - bps[near_k])
        cross = free & (new_side != side) & (side != 0)
        if not leave.any() and not cross.any():
            return y, eta, rn, S, True, iters
        # released nodes move off the breakpoint in the direction the multiplier pushes
        rel = S[leave]
        side[rel] = np.where(eta[rel] < lo[leave], -1.0, 1.0) * np.sign(jumps[near_k[rel]])
        active[rel] = False
        active[cross] = True
    return y, eta, rn, np.flatnonzero(active), False, iters


def _center_in_box(tr: TraceOperator, S: np.ndarray, eta_S: np.ndarray, lo: np.ndarray,
                   hi: np.ndarray) -> np.ndarray:
    """Move eta_S along the kernel of eta_S -> L_S^T W_S eta_S to the most interior point of [lo, hi].

    With many nodes pinned the pinned multipliers are only determined up to
    that kernel (a closed boundary loop makes the trace rows dependent), so
    the linear solve returns an arbitrary member of the family. The shift
    leaves the residual unchanged. Solves max t s.t. lo + t <= eta + N c <= hi - t.
    """
    if S.size == 0:
        return eta_S
    A = tr.L[S].T @ sp.diags(tr.wGamma[S])
    lam, vecs = eigh((A.T @ A).toarray())
    N = vecs[:, lam <= 1e-12 * max(lam[-1], np.finfo(float).tiny)]
    if N.shape[1] == 0:
        return eta_S
    d = N.shape[1]
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    ones = np.ones((S.size, 1))
    A_ub = np.vstack([np.hstack([N, ones]), np.hstack([-N, ones])])
    b_ub = np.concatenate([hi - eta_S, eta_S - lo])
    width = float(np.max(hi - lo, initial=1.0))
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * d + [(None, width)], method="highs")
    if res.status != 0:
        return eta_S
    return eta_S + N @ res.x[:d]


def _side_values(j: Superpotential, u: np.ndarray, side: np.ndarray, near_k: np.ndarray):
    """g and g' evaluated on the piece chosen by ``side`` relative to the nearest breakpoint."""
    bps = np.asarray(j.breakpoints)
    val = j.g(u)
    der = j.dg(u)
    if bps.size:
        b = bps[near_k]
        wrong_right = (side > 0) & (u < b)
        wrong_left = (side < 0) & (u >= b)
        for mask, offset in ((wrong_right, 1), (wrong_left, 0)):
            for k in np.unique(near_k[mask]):
                sel = mask & (near_k == k)
                piece = j.pieces[k + offset]
                val[sel] = piece.g(u[sel])
                der[sel] = piece.dg(u[sel])
    return val, der


def _pinned_newton(sys_: _System, y, S, b_S, side, near_k, opts: SolveOptions, history):
    j, tr = sys_.j, sys_.tr
    n = y.size
    nS = S.size
    LS = tr.L[S]
    wS = tr.wGamma[S]
    free = np.ones(tr.n_U, dtype=bool)
    free[S] = False

    def assemble(yv, etaS):
        u = tr.apply(yv)
        g, dg = _side_values(j, u, side, near_k)
        eta = np.where(free, g, 0.0)
        eta[S] = etaS
        r1 = sys_.F(yv) + tr.adjoint(eta) - sys_.f
        r2 = u[S] - b_S
        return r1, r2, eta, dg

    # initial multipliers from the smoothed values
    u0 = tr.apply(y)
    etaS = smoothed_g(j, u0, opts.eps_schedule[-1])[0][S] if nS else np.zeros(0)
    r1, r2, eta, dg = assemble(y, etaS)
    rn = math.hypot(np.linalg.norm(r1), np.linalg.norm(r2))
    history.append(IterationRecord("polish", 0.0, 0, float(np.linalg.norm(r1)), 0.0, 0.0))
    it = 0
    while (np.linalg.norm(r1) > opts.newton_tol or np.linalg.norm(r2) > opts.newton_tol) and it < opts.max_iters:
        it += 1
        Jf = sys_.JF(y) + tr.L.T @ sp.diags(tr.wGamma * np.where(free, dg, 0.0)) @ tr.L
        K = sp.bmat([[Jf, (LS.T @ sp.diags(wS))], [LS, None]], format="csc")
        try:
            step = spsolve(K, -np.concatenate([r1, r2]))
        except RuntimeError:
            return y, eta, float(np.linalg.norm(r1)), it, False
        if not np.all(np.isfinite(step)):
            return y, eta, float(np.linalg.norm(r1)), it, False
        dy, de = step[:n], step[n:]
        t = 1.0
        while t >= 1e-12:
            r1t, r2t, etat, dgt = assemble(y + t * dy, etaS + t * de)
            rnt = math.hypot(np.linalg.norm(r1t), np.linalg.norm(r2t))
            if rnt < rn:
                break
            t *= 0.5
        else:
            break
        y, etaS = y + t * dy, etaS + t * de
        r1, r2, eta, dg, rn = r1t, r2t, etat, dgt, rnt
        history.append(IterationRecord("polish", 0.0, it, float(np.linalg.norm(r1)),
                                       float(t * np.linalg.norm(dy)), t))
    ok = np.linalg.norm(r1) <= opts.newton_tol and np.linalg.norm(r2) <= max(opts.newton_tol, 1e-12)
    return y, eta, float(np.linalg.norm(r1)), it, bool(ok)


def _project(j: Superpotential, u: np.ndarray, eta: np.ndarray) -> np.ndarray:
    lo, hi = subdiff_bounds(j, u, snap=BREAKPOINT_SNAP)
    out = np.clip(eta, lo, hi)
    # overshoot at a breakpoint falls back to the interval midpoint
    snapped = (lo != hi) & ((eta < lo) | (eta > hi))
    out[snapped] = 0.5 * (lo[snapped] + hi[snapped])
    return out


def solve_stationary(ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator,
                     f: np.ndarray, opts: SolveOptions = SolveOptions(), y0: Optional[np.ndarray] = None,
                     shift: float = 0.0, warn: bool = True,
                     active_guess: Optional[np.ndarray] = None) -> StationarySolveReport:
    """Solve F(y) + shift M y + l^* eta = f with eta in dj(l y).

    ``shift`` adds ``shift * M`` to the operator, which is how a backward
    Euler step enters. ``active_guess`` (boundary node indices believed to
    sit on a breakpoint) lets a warm-started solve try the active-set
    polish directly and fall back to full continuation if it fails.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (ops.space.n,):
        raise ValueError("forcing has wrong length")
    if warn:
        th = thresholds(p, tr, j)
        if not th.rothe_wellposed:
            log.warning("mu - C_psi ||l||^2 = %.4g <= 0: a-priori bounds are not guaranteed", th.mu_tilde)
    sys_ = _System(ops, p, j, tr, f, shift)
    y = np.zeros(ops.space.n) if y0 is None else np.array(y0, dtype=float)
    history: list[IterationRecord] = []
    iterations: dict[str, int] = {}
    has_jumps = bool(j.breakpoints) and any(jump != 0 for jump in j.jumps())
    if has_jumps and active_guess is not None:
        y_p, eta_p, rn_p, S, ok_p, it_p = _polish(sys_, y, opts.eps_schedule[-1], opts, history,
                                                  active_guess=np.asarray(active_guess, dtype=int))
        if ok_p:
            return StationarySolveReport(y=y_p, eta=eta_p, residual=rn_p, converged=True,
                                         iterations={"polish": it_p}, history=history, sticking=S)
        history.clear()
    schedule = opts.eps_schedule if j.breakpoints else opts.eps_schedule[-1:]
    ok = False
    rn = math.inf
    for eps in schedule:
        y, rn, it, ok = _newton_stage(sys_, y, eps, opts, f"eps={eps:g}", history)
        iterations[f"eps={eps:g}"] = it
    eps = schedule[-1]
    u = tr.apply(y)
    eta = smoothed_g(j, u, eps)[0]
    sticking = np.zeros(0, dtype=int)
    message = ""
    if has_jumps:
        y_p, eta_p, rn_p, S, ok_p, it_p = _polish(sys_, y, eps, opts, history)
        iterations["polish"] = it_p
        if ok_p:
            y, eta, rn, sticking, ok = y_p, eta_p, rn_p, S, True
        else:
            message = "active-set polish failed; multiplier projected onto Clarke intervals"
            eta = _project(j, u, eta)
            rn = float(np.linalg.norm(sys_.F(y) + tr.adjoint(eta) - f))
            ok = rn <= opts.newton_tol
    if not ok and not message:
        message = f"residual {rn:.3e} above tolerance {opts.newton_tol:.1e}"
    return StationarySolveReport(y=y, eta=eta, residual=rn, converged=bool(ok), iterations=iterations,
                                 history=history, sticking=sticking, message=message)


def residual(ops: OperatorSet, p: CbfParams, tr: TraceOperator, f: np.ndarray, y: np.ndarray,
             eta: np.ndarray, shift: float = 0.0) -> float:
    r = apply_F(ops, p, y) + shift * (ops.mass @ y) + tr.adjoint(eta) - f
    return float(np.linalg.norm(r))


def inclusion_defect(j: Superpotential, tr: TraceOperator, y: np.ndarray, eta: np.ndarray) -> float:
    """Largest distance of eta_i from the Clarke interval at (l y)_i."""
    lo, hi = subdiff_bounds(j, tr.apply(y), snap=BREAKPOINT_SNAP)
    return float(np.max(np.maximum(lo - eta, 0) + np.maximum(eta - hi, 0), initial=0.0))


def energy_pairing_gap(ops: OperatorSet, p: CbfParams, tr: TraceOperator, f, y, eta) -> tuple[float, float]:
    """(<F(y), y> + <eta, l y>_U, <f, y>)."""
    lhs = float(apply_F(ops, p, y) @ y) + tr.pairing(eta, tr.apply(y))
    return lhs, float(f @ y)


def verify_stationary_bounds(report: StationarySolveReport, ops: OperatorSet, p: CbfParams,
                             j: Superpotential, tr: TraceOperator, f: np.ndarray) -> CheckReport:
    """V-norm and L^{r+1} a-priori bounds at a converged solution."""
    th = thresholds(p, tr, j)
    if th.mu_tilde <= 0:
        return CheckReport.skipped("stationary_bounds", "stationary-bounds",
                                   f"mu_tilde = {th.mu_tilde:.4g} <= 0", **p.as_dict())
    if not report.converged:
        return CheckReport.skipped("stationary_bounds", "stationary-bounds", "solve not converged",
                                   **p.as_dict())
    f_dual = dual_norm_V(ops.space, f)
    num = th.C_psi * tr.op_norm + f_dual
    v_bound = num / th.mu_tilde
    yV = norm_V(ops.space, report.y)
    rep = le_check("stationary_bounds", "stationary-bounds", yV, v_bound, **p.as_dict())
    if p.beta > 0:
        lp = norm_Lp(ops.space, report.y, p.r + 1) ** (p.r + 1)
        lp_bound = num**2 / (p.beta * th.mu_tilde)
        rep.bound2 = lp_bound
        rep.extra["Lr1"] = lp
        if lp > lp_bound * (1 + 1e-10):
            rep.status = "fail"
    rep.extra["f_dual"] = f_dual
    return rep


def twin_solve_uniqueness(ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator,
                          f: np.ndarray, seeds: tuple[np.ndarray, np.ndarray],
                          opts: SolveOptions = SolveOptions(), tol: float = 1e-7) -> CheckReport:
    """Two solves from different starts; pass iff they agree in V to ``tol``.

    The check is only asserted inside the regime where the uniqueness
    condition holds; outside it the agreement is recorded with status
    "skipped".
    """
    th = thresholds(p, tr, j, f_dual=dual_norm_V(ops.space, f))
    r1 = solve_stationary(ops, p, j, tr, f, opts, y0=seeds[0], warn=False)
    r2 = solve_stationary(ops, p, j, tr, f, opts, y0=seeds[1], warn=False)
    if not (r1.converged and r2.converged):
        rep = CheckReport("twin_uniqueness", "stationary-uniqueness", float("nan"), tol, status="fail",
                          params=p.as_dict(), extra={"reason": "solve did not converge"})
        return rep
    gap = norm_V(ops.space, r1.y - r2.y)
    rep = le_check("twin_uniqueness", "stationary-uniqueness", gap, tol, rtol=0.0, **p.as_dict())
    rep.extra.update(threshold=th.stationary_uniqueness_mu, regime=th.regime)
    if not th.stationary_unique:
        rep.extra["agree"] = rep.status == "pass"
        rep.status = "skipped"
        rep.extra["reason"] = "mu below uniqueness threshold"
    return rep
