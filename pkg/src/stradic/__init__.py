"""Stochastic trust-region AdaGrad for equality and bound constrained problems."""

from .errors import (
    ConfigError,
    DimensionError,
    InfeasibleNormalStepError,
    ProblemEvaluationError,
    ProjectionError,
    RankDeficientError,
    StradicError,
    UnknownProblemError,
)
from .oracles import GradientOracle, parse_oracle
from .problems import Problem, get_problem, register_test_problems
from .projections import TangentBoxSet, project_tangent_box, project_tangent_two_boxes
from .solver import SolveOutcome, SolverConfig, solve, step_once

__all__ = [
    "ConfigError",
    "DimensionError",
    "GradientOracle",
    "InfeasibleNormalStepError",
    "Problem",
    "ProblemEvaluationError",
    "ProjectionError",
    "RankDeficientError",
    "SolveOutcome",
    "SolverConfig",
    "StradicError",
    "TangentBoxSet",
    "UnknownProblemError",
    "get_problem",
    "parse_oracle",
    "project_tangent_box",
    "project_tangent_two_boxes",
    "register_test_problems",
    "solve",
    "step_once",
]
