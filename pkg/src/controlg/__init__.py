"""Closed-loop scheduling of multiple training objectives.

Sense spectral demand and gradient interference on a graph, plan per-task
block fractions with a log-hypervolume priority, and track the plan with a
PID deficit controller.  A synthetic quadratic testbed drives the loop.
"""

from .config import SimConfig, dump_config, loads_config, parse_config
from .controller import ControllerConfig, ControllerState, Policy
from .errors import ConfigError, ContractViolation, ConvergenceError, DivergenceError
from .graph_spectral import Graph, eig_sym, normalized_laplacian_quadform, rayleigh_quotient
from .hv_planner import PlannerConfig, PlannerState
from .mgda import GradientSet, MgdaSolution, conflict_scores, normalize_gradients, solve_min_norm
from .sim_engine import RunSummary, run_simulation
from .state_estimator import DifficultyConfig, ObjectiveState
from .trace_io import read_trace, report, write_trace

__all__ = [
    "ConfigError", "ContractViolation", "ControllerConfig", "ControllerState", "ConvergenceError",
    "DifficultyConfig", "DivergenceError", "Graph", "GradientSet", "MgdaSolution", "ObjectiveState",
    "PlannerConfig", "PlannerState", "Policy", "RunSummary", "SimConfig", "conflict_scores", "dump_config",
    "eig_sym", "loads_config", "normalize_gradients", "normalized_laplacian_quadform", "parse_config",
    "rayleigh_quotient", "read_trace", "report", "run_simulation", "solve_min_norm", "write_trace",
]
