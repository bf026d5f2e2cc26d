"""Alternating-minimization driver: simulate, twist, regress, minimize."""

import time
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .csvio import write_table
from .errors import EntropicControlError, ValidationError
from .model import ControlProblem, MarkovPolicy, TimeGrid, default_probe_points, validate_problem, zero_policy
from .policy_min import DEFAULT_MAX_ITERS, DEFAULT_TOL, build_policy
from .regress import DEFAULT_RIDGE, PolynomialBasis, StepDiagnostics, fit_drift
from .simulate import NAMESPACE_TRAIN, path_costs, simulate_paths
from .twist import compute_weights, twist_std_error, twist_value


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float
    iterations: int
    n_paths: int
    grid: TimeGrid
    degree: int = 0
    master_seed: int = 0
    initial_policy: Optional[MarkovPolicy] = None
    ess_floor: float = 2.0
    ridge: float = DEFAULT_RIDGE
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    threads: int = 1
    early_stop_tol: Optional[float] = None
    validate: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")


@dataclass(frozen=True)
class IterationReport:
    k: int
    cost_QP: float
    cost_QP_se: float
    cost_PP: float
    cost_PP_se: float
    ess: float
    min_weight: float
    max_weight: float
    cost_PP_var: float
    regression: Tuple[StepDiagnostics, ...] = field(repr=False, default=())
    seconds: float = 0.0


class SolveResult(NamedTuple):
    policy: MarkovPolicy
    reports: List[IterationReport]


def _attach_iteration(exc: EntropicControlError, k: int):
    exc.iteration = k
    if exc.args:
        exc.args = (f"iteration {k}: {exc.args[0]}",) + exc.args[1:]
    return exc


def solve(problem: ControlProblem, config: SolveConfig) -> SolveResult:
    """Run K iterations and return the last policy with one report per iteration.

    Iteration k draws its step-3 paths from stream ``(train, k)``; the
    initial batch uses stream ``(train, 0)``.
    """
    grid = config.grid
    if abs(grid.horizon - problem.horizon) > 1e-12 * problem.horizon:
        raise ValueError("grid horizon differs from problem horizon")
    basis = PolynomialBasis(config.degree, problem.dim)
    if config.n_paths < basis.size:
        raise ValueError(f"n_paths={config.n_paths} below basis size {basis.size}")
    if config.validate:
        report = validate_problem(problem, default_probe_points(problem))
        if not report.passed:
            failed = [k for k, v in report.checks.items() if not v]
            raise ValidationError(f"problem failed validation checks: {', '.join(failed)}")

    policy = config.initial_policy if config.initial_policy is not None else zero_policy(problem, grid)
    if config.iterations == 0:
        return SolveResult(policy, [])

    def simulate(pol, k):
        return simulate_paths(
            problem, pol, config.n_paths, grid, config.master_seed, (NAMESPACE_TRAIN, k), config.threads
        )

    try:
        batch = simulate(policy, 0)
    except EntropicControlError as exc:
        raise _attach_iteration(exc, 0)

    reports: List[IterationReport] = []
    for k in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        try:
            weights = compute_weights(batch, problem, config.epsilon, config.ess_floor)
            cost_qp = twist_value(weights, config.epsilon)
            drift = fit_drift(batch, weights, problem, basis, config.ridge, config.threads)
            policy = build_policy(drift, problem, config.epsilon, tol=config.tol, max_iters=config.max_iters)
            batch = simulate(policy, k)
            y = path_costs(batch, problem)
        except EntropicControlError as exc:
            raise _attach_iteration(exc, k)
        var = float(np.var(y, ddof=1)) if y.size > 1 else 0.0
        reports.append(
            IterationReport(
                k=k,
                cost_QP=float(cost_qp),
                cost_QP_se=twist_std_error(weights),
                cost_PP=float(np.mean(y)),
                cost_PP_se=float(np.sqrt(var / y.size)),
                ess=weights.ess,
                min_weight=float(weights.normalized.min()),
                max_weight=float(weights.normalized.max()),
                cost_PP_var=var,
                regression=drift.diagnostics,
                seconds=time.perf_counter() - t0,
            )
        )
        if config.early_stop_tol is not None and len(reports) >= 4:
            deltas = [abs(reports[-i].cost_QP - reports[-i - 1].cost_QP) for i in (1, 2, 3)]
            if max(deltas) < config.early_stop_tol:
                break
    return SolveResult(policy, reports)


def descent_check(reports, slack: Optional[float] = None, n_se: float = 3.0) -> bool:
    """True iff cost_QP never rises by more than the slack between iterations.

    With ``slack=None`` each pair uses ``n_se`` pooled standard errors.
    """
    if len(reports) < 2:
        raise ValueError("descent_check needs at least two reports")
    for prev, cur in zip(reports, reports[1:]):
        allowed = slack if slack is not None else n_se * np.hypot(prev.cost_QP_se, cur.cost_QP_se)
        if cur.cost_QP > prev.cost_QP + allowed:
            return False
    return True


def epsilon_gap_bound(policy_cost, optimal_cost, variance, epsilon, eps_prime=0.0, mc_slack=0.0) -> bool:
    """0 <= policy_cost - optimal_cost <= (eps/2) variance + eps_prime + mc_slack."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    gap = policy_cost - optimal_cost
    return bool(0.0 <= gap <= 0.5 * epsilon * variance + eps_prime + mc_slack)


REPORT_COLUMNS = ["k", "cost_QP", "cost_PP", "ess", "min_weight", "max_weight", "cost_QP_se", "cost_PP_se"]


def write_reports_csv(reports, path, comments=(), timing=False):
    columns = REPORT_COLUMNS + (["seconds"] if timing else [])
    rows = []
    for r in reports:
        row = [r.k, r.cost_QP, r.cost_PP, r.ess, r.min_weight, r.max_weight, r.cost_QP_se, r.cost_PP_se]
        if timing:
            row.append(r.seconds)
        rows.append(row)
    return write_table(path, columns, rows, comments)
