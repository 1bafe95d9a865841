"""Stream-function solver and verification harness for Brinkman-Forchheimer
flow with nonsmooth boundary laws."""

from .cbf2d import Discretization, GridSpec, build_space, interpolate, manufactured_case
from .operators import CbfParams, OperatorSet, ThresholdReport, apply_F, compute_thresholds
from .reports import CheckReport
from .rothe import RotheTrajectory, convergence_study, run, twin_run_gronwall
from .state_space import SpaceSpec, load_space, save_space
from .stationary_solver import SolveOptions, StationarySolveReport, solve_stationary
from .superpotential import Superpotential, TraceOperator, make_law, thresholds, verify_hypotheses

__all__ = [
    "CbfParams", "CheckReport", "Discretization", "GridSpec", "OperatorSet", "RotheTrajectory",
    "SolveOptions", "SpaceSpec", "StationarySolveReport", "Superpotential", "ThresholdReport",
    "TraceOperator", "apply_F", "build_space", "compute_thresholds", "convergence_study", "interpolate",
    "load_space", "make_law", "manufactured_case", "run", "save_space", "solve_stationary", "thresholds",
    "twin_run_gronwall", "verify_hypotheses",
]
