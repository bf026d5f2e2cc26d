"""Entropy-penalized Monte Carlo solver for finite-horizon stochastic control."""

from .algorithm import IterationReport, SolveConfig, SolveResult, descent_check, epsilon_gap_bound, solve
from .errors import (
    CoverageError,
    DegenerateWeights,
    DomainEscape,
    EntropicControlError,
    InvalidParams,
    NegativeCost,
    NoConvergence,
    NonFiniteState,
    NonInvertibleDiffusion,
    ParseError,
    SingularRegression,
    ValidationError,
)
from .evaluation import CampaignReport, evaluate_policy, evaluation_campaign
from .model import (
    Box,
    CallablePolicy,
    ConstantPolicy,
    ControlProblem,
    MarkovPolicy,
    QuadraticControl,
    TimeGrid,
    ValidationReport,
    default_probe_points,
    validate_problem,
    zero_policy,
)
from .policy_min import DriftPolicy, PointwiseObjective, build_policy, minimize_pointwise
from .regress import DriftEstimate, PolynomialBasis, fit_drift
from .simulate import PathBatch, path_costs, simulate_paths
from .twist import WeightSet, compute_weights, twist_value

__version__ = "0.1.0"
