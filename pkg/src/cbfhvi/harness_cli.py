"""Experiment configuration and the command-line surface.

Every command writes CSV files into the output directory; each row starts
with the config hash and the tag of the check or artifact it reports.
Exit codes: 0 pass, 2 check failure, 3 solver failure, 4 config error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import functools
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import operators as opx
from .cbf2d import MANUFACTURED, Discretization, GridSpec, build_space, interpolate, manufactured_case
from .operators import CbfParams
from .reports import CheckReport, INEQ_RTOL, le_check
from .rothe import RotheError, RotheTrajectory, convergence_study, energy_ledger_check, run, twin_run_gronwall
from .state_space import check_gram_matrices, dual_norm_V, norm_H, norm_V
from .stationary_solver import (SolveOptions, inclusion_defect, solve_stationary, twin_solve_uniqueness,
                                verify_stationary_bounds)
from .superpotential import (LAWS, BREAKPOINT_SNAP, Superpotential, load_table, make_law, subdiff_bounds,
                             thresholds, verify_hypotheses)

log = logging.getLogger("cbfhvi")

EXIT_OK, EXIT_CHECK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4
OUT_ENV = "CBFHVI_OUT"
PROFILES = ("zero", "constant", "sine", "decay")
INITIAL_STATES = ("zero", "random") + tuple(sorted(MANUFACTURED))


class ConfigError(ValueError):
    pass


# --- configuration --------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA: dict[str, dict[str, Callable[[str], object]]] = {
    "grid": {"nx": int, "ny": int},
    "params": {"mu": float, "alpha": float, "beta": float, "r": float, "convection": _bool},
    "superpotential": {"name": str, "args": _floats, "table": str},
    "trace": {"scale": float},
    "forcing": {"profile": str, "amplitude": float, "manufactured": str},
    "initial": {"state": str, "amplitude": float},
    "time": {"T": float, "N": int, "N_list": _ints},
    "run": {"seed": int, "trials": int, "out": str, "jobs": int, "sweep_mu": _floats, "perturbation": float},
    "tolerances": {"newton_tol": float, "ineq_rtol": float, "coercivity_rtol": float, "skew_rtol": float,
                   "uniqueness_tol": float, "recovery_tol": float},
}


@dataclass(frozen=True)
class LawConfig:
    name: str = "heaviside"
    args: tuple[float, ...] = ()
    table: str = ""

    def build(self) -> Superpotential:
        if self.table:
            return load_table(self.table)
        return make_law(self.name, *self.args)


@dataclass(frozen=True)
class ForcingConfig:
    profile: str = "sine"
    amplitude: float = 1.0
    manufactured: str = ""


@dataclass(frozen=True)
class InitialConfig:
    state: str = "taylor-green"
    amplitude: float = 0.3


@dataclass(frozen=True)
class TimeConfig:
    T: float = 1.0
    N: int = 50
    N_list: tuple[int, ...] = (25, 50, 100, 200)


@dataclass(frozen=True)
class Tolerances:
    newton_tol: float = 1e-10
    ineq_rtol: float = INEQ_RTOL
    coercivity_rtol: float = 1e-12
    skew_rtol: float = 1e-13
    uniqueness_tol: float = 1e-7
    recovery_tol: float = 1e-8


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec = GridSpec(16, 16)
    params: CbfParams = CbfParams(1.0, 0.1, 1.0, 3.0)
    law: LawConfig = LawConfig()
    trace_scale: float = 0.2
    forcing: ForcingConfig = ForcingConfig()
    initial: InitialConfig = InitialConfig()
    time: TimeConfig = TimeConfig()
    seed: int = 42
    trials: int = 1000
    out: str = "out"
    jobs: int = 1
    sweep_mu: tuple[float, ...] = (0.2, 0.5, 1.0, 2.0)
    perturbation: float = 0.01
    tolerances: Tolerances = field(default_factory=Tolerances)

    def validate(self) -> "ExperimentConfig":
        if self.law.name not in LAWS and not self.law.table:
            raise ConfigError(f"unknown superpotential {self.law.name!r}; choose from {sorted(LAWS)}")
        try:
            self.law.build()
        except (TypeError, ValueError, OSError) as exc:
            raise ConfigError(f"superpotential: {exc}") from None
        if self.forcing.profile not in PROFILES:
            raise ConfigError(f"forcing profile must be one of {PROFILES}")
        if self.forcing.manufactured and self.forcing.manufactured not in MANUFACTURED:
            raise ConfigError(f"manufactured case must be one of {sorted(MANUFACTURED)}")
        if self.initial.state not in INITIAL_STATES:
            raise ConfigError(f"initial state must be one of {INITIAL_STATES}")
        if not self.trace_scale >= 0:
            raise ConfigError("trace scale must be nonnegative")
        t = self.time
        if not t.T > 0 or t.N < 1:
            raise ConfigError("time: T must be positive and N at least 1")
        if len(t.N_list) < 3 or any(b != 2 * a for a, b in zip(t.N_list, t.N_list[1:])) or t.N_list[0] < 1:
            raise ConfigError("time: N_list needs at least three entries, each doubling the previous")
        if self.trials < 1 or self.jobs < 1:
            raise ConfigError("run: trials and jobs must be positive")
        if not self.sweep_mu or any(m <= 0 for m in self.sweep_mu):
            raise ConfigError("run: sweep_mu must be a nonempty list of positive values")
        for name, value in dataclasses.asdict(self.tolerances).items():
            if not value > 0:
                raise ConfigError(f"tolerances: {name} must be positive")
        return self

    def canonical(self) -> dict:
        """Everything that affects results; output location and worker count excluded."""
        d = {
            "grid": [self.grid.nx, self.grid.ny],
            "params": self.params.as_dict(),
            "law": dataclasses.asdict(self.law),
            "trace_scale": self.trace_scale,
            "forcing": dataclasses.asdict(self.forcing),
            "initial": dataclasses.asdict(self.initial),
            "time": dataclasses.asdict(self.time),
            "seed": self.seed,
            "trials": self.trials,
            "sweep_mu": list(self.sweep_mu),
            "perturbation": self.perturbation,
            "tolerances": dataclasses.asdict(self.tolerances),
        }
        return json.loads(json.dumps(d))

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def solve_options(self) -> SolveOptions:
        return SolveOptions(newton_tol=self.tolerances.newton_tol)


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text; unknown sections and keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw: dict[str, dict[str, object]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        raw[section] = {}
        for key, value in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                raw[section][key] = SCHEMA[section][key](value)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    base = ExperimentConfig()
    g = raw.get("grid", {})
    pr = raw.get("params", {})
    run_ = raw.get("run", {})
    try:
        grid = GridSpec(g.get("nx", base.grid.nx), g.get("ny", base.grid.ny))
        params = CbfParams(**{**base.params.as_dict(), **pr})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig(
        grid=grid,
        params=params,
        law=dataclasses.replace(base.law, **raw.get("superpotential", {})),
        trace_scale=raw.get("trace", {}).get("scale", base.trace_scale),
        forcing=dataclasses.replace(base.forcing, **raw.get("forcing", {})),
        initial=dataclasses.replace(base.initial, **raw.get("initial", {})),
        time=dataclasses.replace(base.time, **raw.get("time", {})),
        seed=run_.get("seed", base.seed),
        trials=run_.get("trials", base.trials),
        out=run_.get("out", base.out),
        jobs=run_.get("jobs", base.jobs),
        sweep_mu=run_.get("sweep_mu", base.sweep_mu),
        perturbation=run_.get("perturbation", base.perturbation),
        tolerances=dataclasses.replace(base.tolerances, **raw.get("tolerances", {})),
    )
    return cfg.validate()


def load_config(path: Optional[str | Path]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg`` (output directory included)."""
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ", ".join(repr(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    p = cfg.params
    sections = {
        "grid": {"nx": cfg.grid.nx, "ny": cfg.grid.ny},
        "params": {"mu": p.mu, "alpha": p.alpha, "beta": p.beta, "r": p.r, "convection": p.convection},
        "superpotential": dataclasses.asdict(cfg.law),
        "trace": {"scale": cfg.trace_scale},
        "forcing": dataclasses.asdict(cfg.forcing),
        "initial": dataclasses.asdict(cfg.initial),
        "time": dataclasses.asdict(cfg.time),
        "run": {"seed": cfg.seed, "trials": cfg.trials, "out": cfg.out, "jobs": cfg.jobs,
                "sweep_mu": cfg.sweep_mu, "perturbation": cfg.perturbation},
        "tolerances": dataclasses.asdict(cfg.tolerances),
    }
    lines = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {fmt(v)}" for k, v in items.items()]
        lines.append("")
    return "\n".join(lines)


# --- experiment ingredients -----------------------------------------------------

@functools.lru_cache(maxsize=8)
def _discretization(grid: GridSpec, trace_scale: float) -> Discretization:
    return build_space(grid, trace_scale=trace_scale)


def discretization(cfg: ExperimentConfig) -> Discretization:
    return _discretization(cfg.grid, cfg.trace_scale)


def random_state(rng: np.random.Generator, disc: Discretization, scale: Optional[float] = None) -> np.ndarray:
    """Gaussian coefficients rescaled to a log-uniform H-norm in [1e-2, 10]."""
    s = rng.standard_normal(disc.space.n)
    target = 10 ** rng.uniform(-2, 1) if scale is None else scale
    return s * (target / norm_H(disc.space, s))


def forcing_pattern(disc: Discretization) -> np.ndarray:
    """Smooth spatial forcing with unit dual norm."""
    g = disc.ops.mass @ interpolate(disc, MANUFACTURED["taylor-green"])
    return g / dual_norm_V(disc.space, g)


def time_profile(name: str) -> Callable[[float], float]:
    return {
        "zero": lambda t: 0.0,
        "constant": lambda t: 1.0,
        "sine": lambda t: math.sin(2 * math.pi * t),
        "decay": lambda t: math.exp(-t),
    }[name]


def forcing_callable(cfg: ExperimentConfig, disc: Discretization, scale: float = 1.0):
    pattern = cfg.forcing.amplitude * scale * forcing_pattern(disc)
    prof = time_profile(cfg.forcing.profile)
    return lambda t: prof(t) * pattern


def initial_state(cfg: ExperimentConfig, disc: Discretization) -> np.ndarray:
    name, amp = cfg.initial.state, cfg.initial.amplitude
    if name == "random":
        return random_state(np.random.default_rng([cfg.seed, 1]), disc, scale=amp)
    return amp * interpolate(disc, MANUFACTURED[name])


def stationary_forcing(cfg: ExperimentConfig, disc: Discretization, law: Superpotential,
                       params: Optional[CbfParams] = None):
    """Forcing and, for manufactured runs, the reference state."""
    params = params or cfg.params
    if cfg.forcing.manufactured:
        y_star, f = manufactured_case(cfg.forcing.manufactured, disc, params)
        lo, hi = subdiff_bounds(law, disc.trace.apply(y_star), snap=BREAKPOINT_SNAP)
        return f + disc.trace.adjoint(0.5 * (lo + hi)), y_star
    if cfg.forcing.profile == "zero":
        return np.zeros(disc.space.n), None
    return cfg.forcing.amplitude * forcing_pattern(disc), None


# --- output ---------------------------------------------------------------------

def write_checks(path: Path, reports: Iterable[CheckReport], cfg_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("config_hash",) + CheckReport.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerow({"config_hash": cfg_hash, **rep.row()})


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence], cfg_hash: str, tag: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_hash", "tag", *header])
        for row in rows:
            w.writerow([cfg_hash, tag, *(repr(v) if isinstance(v, float) else v for v in row)])


def _status_code(reports: Sequence[CheckReport]) -> int:
    failed = [r for r in reports if r.status == "fail"]
    for r in failed[:5]:
        print(f"FAILED {r.name} [{r.tag}] lhs={r.lhs!r} bound={r.bound1!r} {r.row()['params']}", file=sys.stderr)
    if len(failed) > 5:
        print(f"... {len(failed) - 5} more failures", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def _warn_thresholds(cfg: ExperimentConfig, disc: Discretization, law: Superpotential) -> None:
    th = thresholds(cfg.params, disc.trace, law)
    if not th.rothe_wellposed:
        log.warning("mu - C_psi ||l||^2 = %.4g <= 0: a-priori bounds are not guaranteed", th.mu_tilde)
    if not th.stationary_unique:
        log.warning("mu = %g is not above the %s uniqueness threshold %.4g", cfg.params.mu, th.regime,
                    th.stationary_uniqueness_mu)
    for flag in th.flags:
        log.warning("degenerate parameter: %s", flag)


# --- commands -------------------------------------------------------------------

def operator_suite(cfg: ExperimentConfig, disc: Discretization) -> list[CheckReport]:
    """Gram invariants, then the randomized operator identities and inequalities."""
    reports: list[CheckReport] = []
    gram = check_gram_matrices(disc.space)
    for name, info in gram.items():
        ok = info["symmetric"] and info["positive_definite"]
        reports.append(CheckReport(f"{name}_invariants", "gram-invariants", info["asym"], 0.0,
                                   status="pass" if ok else "fail", extra=dict(info)))
    if any(not r.passed for r in reports):
        return reports

    p, tol = cfg.params, cfg.tolerances
    rng = np.random.default_rng(cfg.seed)
    local_applies = (p.r > 3 and p.beta > 0) or (p.r == 3 and 2 * p.beta * p.mu >= 1)
    for t in range(cfg.trials):
        y = random_state(rng, disc)
        z = random_state(rng, disc)
        batch = [
            opx.verify_coercivity(disc.ops, p, y, rtol=tol.coercivity_rtol),
            opx.verify_skew_symmetry(disc.ops, y, z, rtol=tol.skew_rtol),
            opx.verify_monotonicity_C(disc.ops, y, z, p.r),
        ]
        if local_applies:
            batch.append(opx.verify_local_monotonicity_F(disc.ops, p, y, z))
        for rep in batch:
            rep.params["trial"] = t
        reports += batch
    if not local_applies:
        reports.append(CheckReport.skipped("local_monotonicity_F", "local-monotonicity",
                                           "needs r > 3, or r = 3 with 2*beta*mu >= 1", **p.as_dict()))
    for t in range(min(cfg.trials, 10)):
        rep = opx.verify_gateaux(disc.ops, random_state(rng, disc), random_state(rng, disc), p.r)
        rep.params["trial"] = t
        reports.append(rep)

    law = cfg.law.build()
    hyp = verify_hypotheses(law)
    reports.append(CheckReport("superpotential_hypotheses", "superpotential-hypotheses",
                               float(hyp["m_hat"]), float(law.m), bound2=float(law.C0),
                               status="pass" if hyp["accepted"] else "fail",
                               params={"law": law.name}, extra={"C0_hat": hyp["C0_hat"]}))
    return reports


def cmd_verify_operators(cfg: ExperimentConfig, out: Path, disc: Optional[Discretization] = None) -> int:
    disc = disc or discretization(cfg)
    log.info("operator suite: seed %d, %d trials", cfg.seed, cfg.trials)
    reports = operator_suite(cfg, disc)
    write_checks(out / "operator_checks.csv", reports, cfg.hash())
    return _status_code(reports)


def cmd_solve_stationary(cfg: ExperimentConfig, out: Path) -> int:
    disc = discretization(cfg)
    law = cfg.law.build()
    _warn_thresholds(cfg, disc, law)
    f, y_star = stationary_forcing(cfg, disc, law)
    rep = solve_stationary(disc.ops, cfg.params, law, disc.trace, f, cfg.solve_options(), warn=False)
    h = cfg.hash()
    rep.write_csv(out / "solve_history.csv", extra={"config_hash": h, "tag": "stationary-solve"})
    np.savetxt(out / "solution.txt", rep.y, fmt="%.17g")
    if not rep.converged:
        print(f"solver failure: {rep.message}", file=sys.stderr)
        return EXIT_SOLVER
    reports = [
        le_check("inclusion_defect", "stationary-inclusion", inclusion_defect(law, disc.trace, rep.y, rep.eta),
                 1e-8, rtol=0.0),
        verify_stationary_bounds(rep, disc.ops, cfg.params, law, disc.trace, f),
    ]
    if y_star is not None:
        err = norm_V(disc.space, rep.y - y_star)
        reports.append(le_check("manufactured_recovery", "manufactured-recovery", err,
                                cfg.tolerances.recovery_tol, rtol=0.0, case=cfg.forcing.manufactured))
    write_checks(out / "stationary_checks.csv", reports, h)
    return _status_code(reports)


def _trajectory(cfg: ExperimentConfig, N: int, data_scale: float = 0.0) -> RotheTrajectory:
    """One Rothe run; ``data_scale`` perturbs the initial state and forcing for twin runs."""
    disc = discretization(cfg)
    law = cfg.law.build()
    y0 = initial_state(cfg, disc)
    f = forcing_callable(cfg, disc, 1.0 + data_scale)
    if data_scale:
        bump = interpolate(disc, lambda x, y: np.cos(2 * np.pi * x) * np.cos(np.pi * y))
        y0 = y0 + data_scale * bump / norm_H(disc.space, bump)
    return run(disc.ops, cfg.params, law, disc.trace, y0, f, cfg.time.T, N, cfg.solve_options(), warn=False)


def _map(fn, items: Sequence, jobs: int) -> list:
    """Ordered map over a bounded process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def cmd_run_rothe(cfg: ExperimentConfig, out: Path) -> int:
    disc = discretization(cfg)
    law = cfg.law.build()
    _warn_thresholds(cfg, disc, law)
    h = cfg.hash()
    try:
        traj = _trajectory(cfg, cfg.time.N)
    except RotheError as exc:
        if exc.partial is not None:
            np.savetxt(out / "snapshots_partial.txt", exc.partial, fmt="%.17g")
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    traj.write_csv(out / "trajectory.csv", extra={"config_hash": h, "tag": "rothe-trajectory"})
    traj.write_snapshots(out / "snapshots.txt")
    reports = [energy_ledger_check(traj, disc.ops, cfg.params, law, disc.trace)]
    write_checks(out / "rothe_checks.csv", reports, h)
    return _status_code(reports)


def _strictly_decreasing(xs: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def cmd_convergence(cfg: ExperimentConfig, out: Path) -> int:
    disc = discretization(cfg)
    law = cfg.law.build()
    _warn_thresholds(cfg, disc, law)
    h = cfg.hash()
    runner = lambda Ns: _map(functools.partial(_trajectory, cfg), list(Ns), cfg.jobs)
    try:
        rows = convergence_study(disc.ops, cfg.params, law, disc.trace, initial_state(cfg, disc),
                                 forcing_callable(cfg, disc), cfg.time.T, cfg.time.N_list,
                                 cfg.solve_options(), runner=runner)
    except RotheError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_rows(out / "convergence.csv", ["N", "e_N", "d_N", "exact_error"],
               [(r.N, r.e_N, r.d_N, r.exact_error) for r in rows], h, "rothe-convergence")
    e = [r.e_N for r in rows]
    d = [r.d_N for r in rows]
    reports = [
        CheckReport("self_convergence", "rothe-convergence", e[-1], e[0],
                    status="pass" if _strictly_decreasing(e) else "fail",
                    extra={"ratios": ",".join(f"{a / b:.4f}" for a, b in zip(e, e[1:]))}),
        CheckReport("energy_equality_defect", "energy-equality", d[-1], d[0],
                    status="pass" if _strictly_decreasing(d) else "fail"),
    ]
    write_checks(out / "convergence_checks.csv", reports, h)
    return _status_code(reports)


def _twin_pair(cfg: ExperimentConfig) -> tuple[RotheTrajectory, RotheTrajectory]:
    t1, t2 = _map(functools.partial(_trajectory, cfg, cfg.time.N), [0.0, cfg.perturbation], cfg.jobs)
    return t1, t2


def cmd_twin_run(cfg: ExperimentConfig, out: Path) -> int:
    disc = discretization(cfg)
    law = cfg.law.build()
    _warn_thresholds(cfg, disc, law)
    try:
        t1, t2 = _twin_pair(cfg)
    except RotheError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    rep = twin_run_gronwall(disc.ops, cfg.params, law, disc.trace, (None, None), (None, None),
                            cfg.time.T, cfg.time.N, trajectories=(t1, t2))
    if rep.status == "skipped":
        log.warning("twin-run bound not asserted: %s", rep.extra.get("reason"))
    write_checks(out / "twin_checks.csv", [rep], cfg.hash())
    return _status_code([rep])


def _sweep_point(cfg: ExperimentConfig, mu: float) -> CheckReport:
    disc = discretization(cfg)
    law = cfg.law.build()
    p = dataclasses.replace(cfg.params, mu=mu)
    f, _ = stationary_forcing(cfg, disc, law, p)
    rng = np.random.default_rng([cfg.seed, 2])
    seeds = (np.zeros(disc.space.n), random_state(rng, disc, scale=10.0))
    rep = twin_solve_uniqueness(disc.ops, p, law, disc.trace, f, seeds, cfg.solve_options(),
                                tol=cfg.tolerances.uniqueness_tol)
    rep.params["mu"] = mu
    return rep


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    reports = _map(functools.partial(_sweep_point, cfg), sorted(cfg.sweep_mu), cfg.jobs)
    for rep in reports:
        log.info("mu=%g threshold=%.4g status=%s", rep.params["mu"], rep.extra.get("threshold", math.nan),
                 rep.status)
    write_checks(out / "sweep.csv", reports, cfg.hash())
    return _status_code(reports)


COMMANDS = {
    "verify-operators": cmd_verify_operators,
    "solve-stationary": cmd_solve_stationary,
    "run-rothe": cmd_run_rothe,
    "convergence": cmd_convergence,
    "twin-run": cmd_twin_run,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbfhvi", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="INI experiment config (defaults are used when omitted)")
    ap.add_argument("--seed", type=int, help="override [run] seed")
    ap.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and [run] out)")
    ap.add_argument("--jobs", type=int, help="worker processes for sweep, convergence and twin-run")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes: dict = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    out = args.out or os.environ.get(OUT_ENV) or cfg.out
    changes["out"] = out
    return dataclasses.replace(cfg, **changes).validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(dump_config(cfg))
    code = COMMANDS[args.command](cfg, out)
    print(f"{args.command}: {'pass' if code == 0 else 'exit ' + str(code)} (config {cfg.hash()}, out {out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
