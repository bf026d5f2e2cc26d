"""Per-step weighted least-squares estimate of the twisted drift.

For each step m the regression target is the forward increment
``(X_{m+1} - X_m)/dt - b(t_m, X_m)`` and the weights are the normalized
twist weights. Steps are fitted independently.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb
from typing import List, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .csvio import write_table
from .errors import SingularRegression
from .model import ControlProblem, TimeGrid
from .simulate import PathBatch
from .twist import WeightSet

DEFAULT_RIDGE = 1e-10


class PolynomialBasis:
    """All monomials x^alpha with |alpha| <= degree, graded-lex ordered.

    Within a total degree, x_1 sorts before x_2 (so for d = 2, r = 2 the
    order is 1, x1, x2, x1^2, x1 x2, x2^2).
    """

    def __init__(self, degree: int, dim: int):
        if degree < 0 or dim < 1:
            raise ValueError("degree must be >= 0 and dim >= 1")
        self.degree = int(degree)
        self.dim = int(dim)
        exps = []
        for total in range(self.degree + 1):
            for combo in combinations_with_replacement(range(self.dim), total):
                alpha = [0] * self.dim
                for i in combo:
                    alpha[i] += 1
                exps.append(tuple(alpha))
        self.exponents: List[Tuple[int, ...]] = exps
        self._index = {a: i for i, a in enumerate(exps)}

    @property
    def size(self) -> int:
        return len(self.exponents)

    def __len__(self):
        return self.size

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.ones((x.shape[0], self.size))
        for j, alpha in enumerate(self.exponents):
            for i, p in enumerate(alpha):
                if p:
                    out[:, j] *= x[:, i] ** p
        return out

    def recenter_matrix(self, shift: np.ndarray, scale: np.ndarray) -> np.ndarray:
        """Matrix T with z-monomial coefficients c_z mapping to x-monomial
        coefficients T @ c_z, where z = (x - shift) / scale."""
        F = self.size
        T = np.zeros((F, F))
        for col, alpha in enumerate(self.exponents):
            for row, beta in enumerate(self.exponents):
                if any(b > a for a, b in zip(alpha, beta)):
                    continue
                v = 1.0
                for a, b, s, c in zip(alpha, beta, shift, scale):
                    v *= comb(a, b) * (-s) ** (a - b) / c**a
                T[row, col] = v
        return T


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    residual_norm: float
    condition: float
    target_kurtosis: float


@dataclass(frozen=True, eq=False)
class DriftEstimate:
    grid: TimeGrid
    basis: PolynomialBasis
    coeffs: np.ndarray  # (M, F, d)
    diagnostics: Tuple[StepDiagnostics, ...]

    def evaluate(self, m: int, x: np.ndarray) -> np.ndarray:
        return self.basis.features(x) @ self.coeffs[m]

    def write_csv(self, path, comments=()):
        d = self.coeffs.shape[2]
        nodes = self.grid.nodes
        columns = ["step", "t", "feature_index", "exponent"] + [f"c_{i + 1}" for i in range(d)]
        rows = []
        for m in range(self.grid.num_steps):
            for j, alpha in enumerate(self.basis.exponents):
                rows.append([m, float(nodes[m]), j, "-".join(map(str, alpha))] + self.coeffs[m, j].tolist())
        return write_table(path, columns, rows, comments)

    def write_diagnostics_csv(self, path, comments=()):
        nodes = self.grid.nodes
        rows = [
            [g.step, float(nodes[g.step]), g.residual_norm, g.condition, g.target_kurtosis]
            for g in self.diagnostics
        ]
        return write_table(path, ["step", "t", "residual_norm", "condition", "target_kurtosis"], rows, comments)


def fit_step(x, target, w, basis: PolynomialBasis, ridge: float = DEFAULT_RIDGE, step: int = 0):
    """Weighted ridge fit of ``target`` on polynomial features of ``x``.

    ``w`` must be nonnegative and sum to one. Returns (coeffs (F, d), diagnostics).
    """
    F = basis.size
    mean = w @ x
    std = np.sqrt(w @ (x - mean) ** 2)
    # a coordinate with (numerically) no spread, e.g. every path at the start state
    std = np.where(std > 1e-12 * (1.0 + np.abs(mean)), std, 1.0)
    if basis.degree == 0:
        mean = np.zeros_like(mean)
        std = np.ones_like(std)
    phi = basis.features((x - mean) / std)
    wphi = phi * w[:, None]
    gram = phi.T @ wphi
    rhs = wphi.T @ target
    lam = ridge * np.trace(gram) / F
    gram_j = gram + lam * np.eye(F)
    if not np.all(np.isfinite(gram_j)):
        raise SingularRegression(f"non-finite Gram matrix at step {step}")
    try:
        factor = cho_factor(gram_j)
        cz = cho_solve(factor, rhs)
    except LinAlgError as exc:
        raise SingularRegression(f"Gram matrix not positive definite at step {step}: {exc}") from None
    coeffs = cz if basis.degree == 0 else basis.recenter_matrix(mean, std) @ cz
    if not np.all(np.isfinite(coeffs)):
        raise SingularRegression(f"non-finite coefficients at step {step}")

    resid = phi @ cz - target
    tmean = w @ target
    tvar = w @ (target - tmean) ** 2
    t4 = w @ (target - tmean) ** 4
    kurt = float(np.mean(np.where(tvar > 0, t4 / np.where(tvar > 0, tvar, 1.0) ** 2, 0.0)))
    diag = StepDiagnostics(
        step=step,
        residual_norm=float(np.sqrt(w @ np.sum(resid**2, axis=1))),
        condition=float(np.linalg.cond(gram_j)),
        target_kurtosis=kurt,
    )
    return coeffs, diag


def fit_drift(
    paths: PathBatch,
    weights: WeightSet,
    problem: ControlProblem,
    basis: PolynomialBasis,
    ridge: float = DEFAULT_RIDGE,
    threads: int = 1,
) -> DriftEstimate:
    """Fit beta_m for every step of ``paths`` with the twist weights."""
    if weights.n != paths.n_paths:
        raise ValueError("weights and paths come from different batches")
    if paths.n_paths < basis.size:
        raise SingularRegression(f"N={paths.n_paths} is smaller than the feature count {basis.size}")
    grid = paths.grid
    dt = grid.step
    nodes = grid.nodes
    w = weights.normalized

    def one(m):
        x = paths.states[:, m]
        target = (paths.states[:, m + 1] - x) / dt - problem.drift_at(float(nodes[m]), x)
        return fit_step(x, target, w, basis, ridge, m)

    steps = range(grid.num_steps)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, steps))
    else:
        results = [one(m) for m in steps]
    coeffs = np.stack([c for c, _ in results])
    return DriftEstimate(grid=grid, basis=basis, coeffs=coeffs, diagnostics=tuple(g for _, g in results))
