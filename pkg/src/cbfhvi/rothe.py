"""Backward-Euler (Rothe) time stepping, interpolants and energy bookkeeping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .operators import CbfParams, OperatorSet, regime_of
from .reports import CheckReport
from .state_space import SpaceSpec, dual_norm_V, norm_H, norm_Lp, norm_V
from .stationary_solver import SolveOptions, StationarySolveReport, solve_stationary
from .superpotential import BREAKPOINT_SNAP, Superpotential, TraceOperator, subdiff_bounds, thresholds

log = logging.getLogger(__name__)

Forcing = Union[Callable[[float], np.ndarray], np.ndarray]

GAUSS_POINTS = 4


class RotheError(RuntimeError):
    """Inner solve failure; ``partial`` holds the snapshots computed before it."""

    def __init__(self, step: int, report: StationarySolveReport, partial: Optional[np.ndarray] = None):
        super().__init__(f"inner solve failed at step {step}: {report.message}")
        self.step = step
        self.report = report
        self.partial = partial


@dataclass
class EnergyRecord:
    i: int
    h_sq: float
    h_prev_sq: float
    jump_sq: float
    v_sq: float
    lr1: float
    boundary: float
    forcing: float
    identity_residual: float


@dataclass
class RotheTrajectory:
    k: float
    T: float
    snapshots: np.ndarray          # (N + 1, n)
    multipliers: np.ndarray        # (N, n_U)
    forcing: np.ndarray            # (N, n)
    energy: list[EnergyRecord]
    params: CbfParams
    newton_tol: float
    inner_iterations: list[int] = field(default_factory=list)
    initial_bound_constant: float = 0.0

    @property
    def N(self) -> int:
        return self.snapshots.shape[0] - 1

    def times(self) -> np.ndarray:
        return self.k * np.arange(self.N + 1)

    def write_csv(self, path: str | Path, extra: Optional[dict] = None) -> None:
        extra = extra or {}
        cols = ["i", "t", "norm_H", "norm_V", "norm_Lr1", "boundary_pairing", "identity_residual"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(extra) + cols)
            for rec in self.energy:
                w.writerow(list(extra.values()) + [
                    rec.i, repr(rec.i * self.k), repr(math.sqrt(rec.h_sq)), repr(math.sqrt(rec.v_sq)),
                    repr(rec.lr1 ** (1 / (self.params.r + 1))), repr(rec.boundary), repr(rec.identity_residual)])

    def write_snapshots(self, path: str | Path) -> None:
        np.savetxt(path, self.snapshots, fmt="%.17g")


def discretize_forcing(f: Forcing, T: float, N: int) -> np.ndarray:
    """Step averages (1/k) int f over ((i-1)k, ik] by 4-point Gauss quadrature."""
    if N < 1:
        raise ValueError("N must be at least 1")
    k = T / N
    if not callable(f):
        f = np.asarray(f, dtype=float)
        if f.ndim == 1:
            return np.tile(f, (N, 1))
        if f.shape[0] != N:
            raise ValueError("forcing table must have N rows")
        return f.copy()
    x, w = leggauss(GAUSS_POINTS)
    out = []
    for i in range(1, N + 1):
        a = (i - 1) * k
        acc = sum(wg * np.asarray(f(a + 0.5 * k * (1 + xg)), dtype=float) for xg, wg in zip(x, w))
        out.append(0.5 * acc)
    return np.array(out)


def initial_approximation(y0: np.ndarray, T: float = 1.0, space: Optional[SpaceSpec] = None):
    """Discrete initial data is used as is.

    Returns the state and the constant C in ||y_{k,0}|| <= C / sqrt(k),
    which holds for every k <= T with C = sqrt(T) ||y0||.
    """
    y0 = np.asarray(y0, dtype=float)
    nrm = norm_H(space, y0) if space is not None else float(np.linalg.norm(y0))
    return y0.copy(), math.sqrt(T) * max(nrm, np.finfo(float).tiny)


def rothe_step(ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator, y_prev: np.ndarray,
               f_i: np.ndarray, k: float, opts: SolveOptions = SolveOptions(),
               active_guess: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray, StationarySolveReport]:
    """Solve (1/k) M (y - y_prev) + F(y) + l^* eta = f_i."""
    if not k > 0:
        raise ValueError("time step must be positive")
    rhs = f_i + (ops.mass @ y_prev) / k
    rep = solve_stationary(ops, p, j, tr, rhs, opts, y0=y_prev, shift=1.0 / k, warn=False,
                           active_guess=active_guess)
    return rep.y, rep.eta, rep


def energy_record(ops: OperatorSet, p: CbfParams, tr: TraceOperator, i: int, k: float, y, y_prev, eta, f_i):
    sp_ = ops.space
    h_sq = norm_H(sp_, y) ** 2
    h_prev = norm_H(sp_, y_prev) ** 2
    jump = norm_H(sp_, y - y_prev) ** 2
    v_sq = norm_V(sp_, y) ** 2
    lr1 = norm_Lp(sp_, y, p.r + 1) ** (p.r + 1)
    bnd = tr.pairing(eta, tr.apply(y))
    forc = float(f_i @ y)
    res = h_sq - h_prev + jump + 2 * k * (p.mu * v_sq + p.alpha * h_sq + p.beta * lr1) + 2 * k * bnd - 2 * k * forc
    return EnergyRecord(i, h_sq, h_prev, jump, v_sq, lr1, bnd, forc, res)


def run(ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator, y0: np.ndarray, f: Forcing,
        T: float, N: int, opts: SolveOptions = SolveOptions(), warn: bool = True) -> RotheTrajectory:
    """Full trajectory with the energy ledger filled in."""
    if warn:
        th = thresholds(p, tr, j)
        if not th.rothe_wellposed:
            log.warning("mu - C_psi ||l||^2 = %.4g <= 0: Rothe estimates are not guaranteed", th.mu_tilde)
    k = T / N
    fk = discretize_forcing(f, T, N)
    y, C_init = initial_approximation(y0, T, ops.space)
    snaps = [y]
    etas, records, iters = [], [], []
    active = None
    for i in range(1, N + 1):
        y_new, eta, rep = rothe_step(ops, p, j, tr, y, fk[i - 1], k, opts, active_guess=active)
        if not rep.converged:
            raise RotheError(i, rep, np.array(snaps))
        active = rep.sticking if rep.sticking.size else None
        records.append(energy_record(ops, p, tr, i, k, y_new, y, eta, fk[i - 1]))
        iters.append(sum(rep.iterations.values()))
        snaps.append(y_new)
        etas.append(eta)
        y = y_new
    return RotheTrajectory(k=k, T=T, snapshots=np.array(snaps), multipliers=np.array(etas), forcing=fk,
                           energy=records, params=p, newton_tol=opts.newton_tol, inner_iterations=iters,
                           initial_bound_constant=C_init)


# --- interpolants ---------------------------------------------------------------

def _step_index(traj: RotheTrajectory, t: float) -> int:
    if t < 0 or t > traj.T * (1 + 1e-12):
        raise ValueError(f"t = {t} outside [0, {traj.T}]")
    i = math.ceil(t / traj.k - 1e-9)
    return min(max(i, 1), traj.N)


def eval_linear(traj: RotheTrajectory, t: float) -> np.ndarray:
    """y_i + (t/k - i)(y_i - y_{i-1}) on ((i-1)k, ik]."""
    i = _step_index(traj, t)
    yi, yp = traj.snapshots[i], traj.snapshots[i - 1]
    return yi + (t / traj.k - i) * (yi - yp)


def eval_constant(traj: RotheTrajectory, t: float) -> np.ndarray:
    """y_i on ((i-1)k, ik], and y_0 at t = 0."""
    if t == 0:
        return traj.snapshots[0].copy()
    return traj.snapshots[_step_index(traj, t)].copy()


def interpolant_gap(traj: RotheTrajectory, space: SpaceSpec) -> tuple[float, float]:
    """(int_0^T ||ybar_k - y_k||_H^2, (k^2/3) ||y_k'||^2_{L^2(0,T;H)}).

    The first is the closed form (k/3) sum ||y_i - y_{i-1}||^2, the second
    goes through the derivative of the linear interpolant.
    """
    k = traj.k
    jumps = np.diff(traj.snapshots, axis=0)
    jump_sq = np.array([norm_H(space, d) ** 2 for d in jumps])
    gap_sq = k / 3 * float(np.sum(jump_sq))
    deriv_sq = float(np.sum(k * np.array([norm_H(space, d / k) ** 2 for d in jumps])))
    return gap_sq, k**2 / 3 * deriv_sq


def interpolant_gap_quadrature(traj: RotheTrajectory, space: SpaceSpec, subintervals: int = 1000) -> float:
    """Brute-force time quadrature of ||ybar_k - y_k||_H^2 through the evaluators.

    Subintervals are aligned with the steps and use 3-point Gauss rules, so
    the piecewise quadratic integrand is integrated exactly up to rounding.
    """
    per_step = max(1, math.ceil(subintervals / traj.N))
    x, w = leggauss(3)
    h = traj.k / per_step
    total = 0.0
    for i in range(1, traj.N + 1):
        for s in range(per_step):
            a = (i - 1) * traj.k + s * h
            for xg, wg in zip(x, w):
                t = a + 0.5 * h * (1 + xg)
                d = eval_constant(traj, t) - eval_linear(traj, t)
                total += 0.5 * h * wg * norm_H(space, d) ** 2
    return total


# --- energy checks --------------------------------------------------------------

def energy_ledger_check(traj: RotheTrajectory, ops: OperatorSet, p: CbfParams, j: Superpotential,
                        tr: TraceOperator) -> CheckReport:
    """Per-step identity, cumulative bound and multiplier bound."""
    tol = traj.newton_tol
    res = np.array([abs(r.identity_residual) for r in traj.energy])
    allow = 10 * tol * (1 + np.array([r.h_sq for r in traj.energy]))
    step_ok = bool(np.all(res <= allow)) if res.size else True
    th = thresholds(p, tr, j)
    k, T = traj.k, traj.T
    extra = {"max_identity_residual": float(res.max(initial=0.0)),
             "max_identity_ratio": float(np.max(res / allow, initial=0.0)), "identity_ok": step_ok}

    if th.mu_tilde <= 0:
        rep = CheckReport("rothe_energy", "rothe-energy", float(res.max(initial=0.0)), float(allow.min(initial=0)),
                          status="pass" if step_ok else "fail", params=p.as_dict(), extra=extra)
        rep.extra["cumulative"] = "skipped: mu_tilde <= 0"
        return rep

    y0_sq = norm_H(ops.space, traj.snapshots[0]) ** 2
    f_sq = float(sum(k * dual_norm_V(ops.space, fi) ** 2 for fi in traj.forcing))
    rhs = y0_sq + 2 / th.mu_tilde * (th.C_psi**2 * th.trace_norm**2 * T + f_sq)
    partial, lhs_max = 0.0, 0.0
    for r in traj.energy:
        partial += r.jump_sq + 2 * p.alpha * k * r.h_sq + 2 * p.beta * k * r.lr1 + k * th.mu_tilde * r.v_sq
        lhs_max = max(lhs_max, r.h_sq + partial)
    cum_ok = lhs_max <= rhs * (1 + 1e-12)

    eta_sq = float(sum(k * tr.norm_U(eta) ** 2 for eta in traj.multipliers))
    v_sum = float(sum(k * r.v_sq for r in traj.energy))
    eta_bound = 2 * th.C_psi**2 * (T + th.trace_norm**2 * v_sum)
    eta_ok = eta_sq <= eta_bound * (1 + 1e-12)

    extra.update(cumulative_ok=cum_ok, multiplier_sum=eta_sq, multiplier_bound=eta_bound, multiplier_ok=eta_ok)
    ok = step_ok and cum_ok and eta_ok
    return CheckReport("rothe_energy", "rothe-energy", lhs_max, rhs, tol=float(allow.max(initial=0.0)),
                       status="pass" if ok else "fail", params=p.as_dict(), extra=extra)


def forcing_at(f: Forcing, t: float) -> np.ndarray:
    if callable(f):
        return np.asarray(f(t), dtype=float)
    f = np.asarray(f, dtype=float)
    if f.ndim != 1:
        raise ValueError("pointwise forcing values need a callable or a constant vector")
    return f


def _knot_multiplier(j: Superpotential, tr: TraceOperator, y: np.ndarray) -> np.ndarray:
    lo, hi = subdiff_bounds(j, tr.apply(y), snap=BREAKPOINT_SNAP)
    return 0.5 * (lo + hi)


def energy_equality_defect(traj: RotheTrajectory, ops: OperatorSet, p: CbfParams, j: Superpotential,
                           tr: TraceOperator, f: Forcing) -> float:
    """|residual of the continuous energy equality at T| with trapezoidal time integrals."""
    sp_ = ops.space
    k = traj.k
    ys = traj.snapshots
    fvals = [forcing_at(f, t) for t in traj.times()]
    etas = [_knot_multiplier(j, tr, ys[0])] + list(traj.multipliers)
    dens = []
    for y, eta, fv in zip(ys, etas, fvals):
        dens.append(p.mu * norm_V(sp_, y) ** 2 + p.alpha * norm_H(sp_, y) ** 2
                    + p.beta * norm_Lp(sp_, y, p.r + 1) ** (p.r + 1)
                    + tr.pairing(eta, tr.apply(y)) - float(fv @ y))
    dens = np.array(dens)
    integral = k * (0.5 * dens[0] + dens[1:-1].sum() + 0.5 * dens[-1])
    return abs(norm_H(sp_, ys[-1]) ** 2 - norm_H(sp_, ys[0]) ** 2 + 2 * integral)


@dataclass
class ConvergenceRow:
    N: int
    e_N: float
    d_N: float
    exact_error: float = float("nan")


def convergence_study(ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator, y0: np.ndarray,
                      f: Forcing, T: float, N_list: Sequence[int], opts: SolveOptions = SolveOptions(),
                      exact: Optional[Callable[[float], np.ndarray]] = None,
                      runner: Optional[Callable] = None) -> list[ConvergenceRow]:
    """Self-convergence on shared knots plus the energy-equality defect.

    e_N compares the N and 2N runs at the knots of the N run; the last N in
    the list only serves as the reference for its predecessor.
    """
    N_list = list(N_list)
    if len(N_list) < 3:
        raise ValueError("need at least three values of N")
    if any(b != 2 * a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must double at every entry")
    if runner is None:
        trajs = [run(ops, p, j, tr, y0, f, T, N, opts, warn=False) for N in N_list]
    else:
        trajs = runner(N_list)
    rows = []
    for a, b in zip(trajs, trajs[1:]):
        fine = b.snapshots[::2]
        e = max(norm_H(ops.space, u - v) for u, v in zip(a.snapshots, fine))
        d = energy_equality_defect(a, ops, p, j, tr, f)
        ex = float("nan")
        if exact is not None:
            ex = max(norm_H(ops.space, u - exact(t)) for u, t in zip(a.snapshots, a.times()))
        rows.append(ConvergenceRow(a.N, float(e), float(d), ex))
    return rows


# --- continuous dependence ------------------------------------------------------

def twin_run_gronwall(ops: OperatorSet, p: CbfParams, j: Superpotential, tr: TraceOperator,
                      data1: tuple[np.ndarray, Forcing], data2: tuple[np.ndarray, Forcing], T: float, N: int,
                      opts: SolveOptions = SolveOptions(), generic_C: float = 1.0,
                      trajectories: Optional[tuple[RotheTrajectory, RotheTrajectory]] = None) -> CheckReport:
    """Check the Lipschitz-dependence bound on two runs with perturbed data.

    Regimes: "critical" for r = 3 with mu > 1/(2 beta) + m ||l||^2 (no
    exponential factor), "supercritical" for r > 3 (factor exp(2 rho_t T /
    mu_hat)), and "subcritical" otherwise (factor exp((C/mu_hat^3) int
    ||y2||_L4^4), with C exposed as ``generic_C``).
    """
    th = thresholds(p, tr, j)
    name, tag = "twin_gronwall", "continuous-dependence"
    lsq = th.trace_norm**2
    if not p.mu > max(th.C_psi, j.m) * lsq:
        return CheckReport.skipped(name, tag, "mu <= max(C_psi, m) ||l||^2", **p.as_dict())
    mu_hat = p.mu - j.m * lsq
    regime = regime_of(p.r)
    if regime == "critical" and not (p.beta > 0 and p.mu > 1 / (2 * p.beta) + j.m * lsq):
        regime = "subcritical"
    if regime == "supercritical" and p.beta == 0:
        return CheckReport.skipped(name, tag, "beta = 0", **p.as_dict())

    if trajectories is None:
        t1 = run(ops, p, j, tr, data1[0], data1[1], T, N, opts, warn=False)
        t2 = run(ops, p, j, tr, data2[0], data2[1], T, N, opts, warn=False)
    else:
        t1, t2 = trajectories
    k = t1.k
    sp_ = ops.space
    w = t1.snapshots - t2.snapshots
    g = t1.forcing - t2.forcing
    w0 = norm_H(sp_, w[0]) ** 2

    if regime == "critical":
        coef_v = p.mu - 1 / (2 * p.beta) - j.m * lsq
        coef_l = 0.0
        g_coef = 2 / coef_v
    else:
        coef_v = mu_hat
        coef_l = p.beta / 2 ** (p.r - 2) if regime == "subcritical" else p.beta / 2**p.r
        g_coef = 2 / mu_hat

    lhs_run, base_run, l4_run = [], [], []
    acc, gacc, l4acc = 0.0, 0.0, 0.0
    for i in range(1, t1.N + 1):
        acc += k * (coef_v * norm_V(sp_, w[i]) ** 2 + coef_l * norm_Lp(sp_, w[i], p.r + 1) ** (p.r + 1))
        gacc += k * dual_norm_V(sp_, g[i - 1]) ** 2
        l4acc += k * norm_Lp(sp_, t2.snapshots[i], 4) ** 4
        lhs_run.append(norm_H(sp_, w[i]) ** 2 + acc)
        base_run.append(w0 + g_coef * gacc)
        l4_run.append(l4acc)
    lhs_run, base_run, l4_run = map(np.array, (lhs_run, base_run, l4_run))

    if regime == "critical":
        G = np.zeros_like(l4_run)
    elif regime == "supercritical":
        rho_t = (p.r - 3) / (p.r - 1) * (8 / (p.beta * mu_hat * (p.r - 1))) ** (2 / (p.r - 3))
        G = 2 * rho_t * t1.times()[1:] / mu_hat
    else:
        G = generic_C / mu_hat**3 * l4_run
    bound_run = base_run * np.exp(G)
    ok = bool(np.all(lhs_run <= bound_run * (1 + 1e-10)))
    n = int(np.argmax(lhs_run / np.where(bound_run > 0, bound_run, np.inf))) if lhs_run.size else 0
    extra = {"regime": regime, "mu_hat": mu_hat, "exponent": float(G[-1]) if G.size else 0.0,
             "margin": float(bound_run[n] / lhs_run[n]) if lhs_run[n] > 0 else math.inf}
    if regime == "subcritical":
        # smallest generic constant that still makes the bound hold at every step
        need = np.log(np.maximum(lhs_run / np.where(base_run > 0, base_run, np.inf), 1.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            c_min = np.where(l4_run > 0, need * mu_hat**3 / l4_run, 0.0)
        extra["minimal_C"] = float(np.max(c_min, initial=0.0))
    return CheckReport(name, tag, float(lhs_run[n]), float(bound_run[n]),
                       status="pass" if ok else "fail", params=p.as_dict(), extra=extra)
