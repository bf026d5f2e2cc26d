"""Exponential-twist weights and the log-Laplace value of the Q-step.

Weights are kept in log-space; ``D_n = exp(-eps * Y_n)`` with Y_n the path
cost. With eps up to ~70 and costs of order one the raw weights underflow,
so everything downstream works from the max-shifted normalized weights.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeights
from .model import ControlProblem
from .simulate import PathBatch, path_costs


@dataclass(frozen=True, eq=False)
class WeightSet:
    epsilon: float
    costs: np.ndarray
    log_raw: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    log_mean_raw: float
    ess: float

    @property
    def n(self) -> int:
        return self.costs.shape[0]


def weights_from_costs(costs, epsilon: float, ess_floor: float = 2.0) -> WeightSet:
    """Build the twist weights for per-path costs ``costs``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 1 or costs.size == 0:
        raise ValueError("costs must be a nonempty 1-d array")
    log_raw = -epsilon * costs
    lse = logsumexp(log_raw)
    normalized = np.exp(log_raw - lse)
    ess = 1.0 / np.sum(normalized**2)
    # ess = 1 / sum(w^2) can exceed N by rounding; keep it in [1, N]
    ess = float(min(max(ess, 1.0), costs.size))
    if ess < ess_floor:
        raise DegenerateWeights(
            f"effective sample size {ess:.3g} below floor {ess_floor:g} (epsilon={epsilon:g} too large for N={costs.size})"
        )
    return WeightSet(
        epsilon=float(epsilon),
        costs=costs,
        log_raw=log_raw,
        raw=np.exp(log_raw),
        normalized=normalized,
        log_mean_raw=float(lse - np.log(costs.size)),
        ess=ess,
    )


def compute_weights(paths: PathBatch, problem: ControlProblem, epsilon: float, ess_floor: float = 2.0) -> WeightSet:
    """Step-1 weights from the controls recorded in ``paths``."""
    return weights_from_costs(path_costs(paths, problem), epsilon, ess_floor)


def twist_value(weights: WeightSet, epsilon: float) -> float:
    """Monte Carlo estimate of -(1/eps) log E[exp(-eps Y)]."""
    if epsilon != weights.epsilon:
        raise ValueError(f"weights were built with epsilon={weights.epsilon}, got {epsilon}")
    return -weights.log_mean_raw / epsilon


def twist_std_error(weights: WeightSet) -> float:
    """Delta-method standard error of :func:`twist_value`.

    se = std(D) / (eps * mean(D) * sqrt(N)), computed on shifted weights.
    """
    w = weights.normalized * weights.n  # D / mean(D)
    return float(np.std(w, ddof=1) / (weights.epsilon * np.sqrt(weights.n))) if weights.n > 1 else 0.0


def jensen_gap(costs, epsilon: float):
    """Return ``(mean - twist, (eps/2) * variance)`` on the empirical measure.

    The variance is the population (1/n) variance of the sample.
    """
    costs = np.asarray(costs, dtype=float)
    twist = -(logsumexp(-epsilon * costs) - np.log(costs.size)) / epsilon
    return float(costs.mean() - twist), float(0.5 * epsilon * costs.var())
