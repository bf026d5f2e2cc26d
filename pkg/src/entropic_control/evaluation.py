"""Evaluation protocol: independent solver runs, each scored on fresh paths."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, NamedTuple

import numpy as np

from .algorithm import SolveConfig, solve
from .csvio import write_table
from .model import ControlProblem, MarkovPolicy, TimeGrid
from .simulate import NAMESPACE_CAMPAIGN, NAMESPACE_EVAL, path_costs, simulate_paths


class PolicyEvaluation(NamedTuple):
    mean_cost: float
    std_error: float


def policy_costs(problem, policy, n_simu, grid, seed, threads=1) -> np.ndarray:
    batch = simulate_paths(problem, policy, n_simu, grid, seed, (NAMESPACE_EVAL,), threads)
    return path_costs(batch, problem)


def evaluate_policy(
    problem: ControlProblem, policy: MarkovPolicy, n_simu: int, grid: TimeGrid, seed: int, threads: int = 1
) -> PolicyEvaluation:
    """Mean and standard error of the path cost over ``n_simu`` fresh paths."""
    if n_simu < 2:
        raise ValueError("n_simu must be >= 2")
    y = policy_costs(problem, policy, n_simu, grid, seed, threads)
    return PolicyEvaluation(float(np.mean(y)), float(np.std(y, ddof=1) / np.sqrt(n_simu)))


def run_seed(campaign_seed: int, run_id: int) -> int:
    """64-bit seed of run ``run_id`` derived from the campaign seed."""
    words = np.random.SeedSequence(int(campaign_seed), spawn_key=(NAMESPACE_CAMPAIGN, int(run_id))).generate_state(
        2, np.uint32
    )
    return int(words[0]) << 32 | int(words[1])


@dataclass(frozen=True)
class RunResult:
    run_id: int
    seed: int
    mean_cost: float
    std_error: float


@dataclass(frozen=True)
class CampaignReport:
    runs: List[RunResult]
    n_simu: int

    @property
    def grand_mean(self) -> float:
        # every run has n_simu paths, so the pooled mean is the mean of run means
        return math.fsum(r.mean_cost for r in self.runs) / len(self.runs)

    @property
    def between_run_std(self) -> float:
        if len(self.runs) < 2:
            return 0.0
        mu = self.grand_mean
        return math.sqrt(math.fsum((r.mean_cost - mu) ** 2 for r in self.runs) / (len(self.runs) - 1))

    @property
    def pooled_std_error(self) -> float:
        return math.sqrt(math.fsum(r.std_error**2 for r in self.runs)) / len(self.runs)

    def table_cell(self) -> str:
        return format_cell(self.grand_mean, self.between_run_std)

    def write_csv(self, path, comments=()):
        rows = [[r.run_id, r.seed, r.mean_cost, r.std_error, ""] for r in self.runs]
        rows.append(["summary", "", self.grand_mean, self.between_run_std, self.table_cell()])
        rows.append(["pooled", "", self.grand_mean, self.pooled_std_error, format_cell(self.grand_mean, self.pooled_std_error)])
        return write_table(path, ["run_id", "seed", "mean_cost", "std_error", "table_cell"], rows, comments)


def format_cell(mean: float, std: float) -> str:
    """``7.60(1e-6)`` style: two decimals, dispersion as one-digit mantissa."""
    if std == 0:
        return f"{mean:.2f}(0)"
    mant, exp = f"{std:.0e}".split("e")
    return f"{mean:.2f}({mant}e{int(exp)})"


def evaluation_campaign(
    problem: ControlProblem,
    solve_config: SolveConfig,
    n_grid: int,
    n_simu: int,
    seed: int,
    threads: int = 1,
) -> CampaignReport:
    """Run the solver ``n_grid`` times with independent seeds and evaluate each
    policy on ``n_simu`` fresh trajectories."""
    if n_grid < 1:
        raise ValueError("n_grid must be >= 1")

    def one(i):
        s = run_seed(seed, i)
        cfg = replace(solve_config, master_seed=s, threads=1 if threads > 1 else solve_config.threads)
        policy, _ = solve(problem, cfg)
        ev = evaluate_policy(problem, policy, n_simu, solve_config.grid, s)
        return RunResult(i, s, ev.mean_cost, ev.std_error)

    if threads > 1 and n_grid > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(one, range(n_grid)))
    else:
        runs = [one(i) for i in range(n_grid)]
    return CampaignReport(runs=runs, n_simu=n_simu)
