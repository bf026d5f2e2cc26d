"""Control problem definition, time grid, Markov feedback policies and
probe-based validation of the structural hypotheses.

All callables attached to a :class:`ControlProblem` are batched: states and
controls are passed as ``(N, d)`` arrays and the time as a float.

* ``drift(t, x) -> (N, d)``
* ``diffusion(t, x) -> (N, d, d)`` (a single ``(d, d)`` matrix is broadcast)
* ``running_cost(t, x, u) -> (N,)``
* ``terminal_cost(x) -> (N,)``
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import NegativeCost, NonInvertibleDiffusion

DEFAULT_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class TimeGrid:
    """Regular subdivision ``0 = t_0 < ... < t_M = T``."""

    horizon: float
    num_steps: int

    def __post_init__(self):
        if int(self.num_steps) != self.num_steps or self.num_steps < 1:
            raise ValueError(f"num_steps must be a positive integer, got {self.num_steps}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def step(self) -> float:
        return self.horizon / self.num_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.num_steps + 1)

    def step_index(self, t: float) -> int:
        """Index m with t in [t_m, t_{m+1}); t = T maps to the last step."""
        m = int(np.searchsorted(self.nodes, t, side="right")) - 1
        return min(max(m, 0), self.num_steps - 1)


@dataclass(frozen=True, eq=False)
class Box:
    """Closed axis-aligned box ``[lower, upper]`` in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        if np.any(lower > upper):
            raise ValueError("box lower bound exceeds upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(u, self.lower), self.upper)

    def contains(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        return np.all((u >= self.lower) & (u <= self.upper), axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((n, self.dim))


@dataclass(frozen=True, eq=False)
class QuadraticControl:
    """Declares that the running cost is quadratic in the control::

        f(t, x, u) = 1/2 u' H(t) u + c(t, x)' u + (terms free of u)

    ``hessian(t)`` returns the symmetric PSD ``(d, d)`` matrix H and
    ``linear(t, x)`` the ``(N, d)`` array c. The policy step uses this to
    solve a box-constrained QP instead of differentiating f numerically.
    """

    hessian: Callable[[float], np.ndarray]
    linear: Callable[[float, np.ndarray], np.ndarray]

    def hessian_at(self, t: float) -> np.ndarray:
        return np.asarray(self.hessian(t), dtype=float)

    def linear_at(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.linear(t, x), dtype=float), x.shape)

    def is_diagonal(self, t: float) -> bool:
        h = self.hessian_at(t)
        return not np.any(h - np.diag(np.diag(h)))


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Finite-horizon controlled diffusion with additive control

    dX = [b(t, X) + u(t, X)] dt + sigma(t, X) dW,   u in the box U,

    and cost E[int f(t, X, u) dt + g(X_T)].
    """

    dim: int
    horizon: float
    start: np.ndarray
    drift: Callable
    diffusion: Callable
    control_box: Box
    running_cost: Callable
    terminal_cost: Callable
    cost_floor_ok: bool = True
    running_cost_grad: Optional[Callable] = None
    quadratic: Optional[QuadraticControl] = None
    diagonal_diffusion: bool = False
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        start = np.atleast_1d(np.asarray(self.start, dtype=float)).copy()
        if start.shape != (self.dim,):
            raise ValueError(f"start must have shape ({self.dim},), got {start.shape}")
        start.setflags(write=False)
        object.__setattr__(self, "start", start)
        if not isinstance(self.control_box, Box):
            object.__setattr__(self, "control_box", Box(*self.control_box))
        if self.control_box.dim != self.dim:
            raise ValueError("control box dimension does not match problem dimension")

    # -- batched evaluation helpers -------------------------------------

    def drift_at(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.drift(t, x), dtype=float), x.shape)

    def sigma_at(self, t: float, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        sig = np.asarray(self.diffusion(t, x), dtype=float)
        return np.broadcast_to(sig, (n, self.dim, self.dim))

    def diffuse(self, t: float, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Row-wise sigma(t, x_n) @ z_n."""
        sig = self.sigma_at(t, x)
        if self.diagonal_diffusion:
            return np.diagonal(sig, axis1=1, axis2=2) * z
        return np.einsum("nij,nj->ni", sig, z)

    def sigma_inverse(self, t: float, x: np.ndarray, floor: float = DEFAULT_SIGMA_FLOOR) -> np.ndarray:
        """Row-wise sigma^{-1}, after checking the relative conditioning floor."""
        sig = self.sigma_at(t, x)
        if self.diagonal_diffusion:
            diag = np.diagonal(sig, axis1=1, axis2=2)
            sv = np.abs(diag)
            _check_conditioning(sv.min(axis=1), sv.max(axis=1), floor, t)
            inv = np.zeros_like(sig)
            idx = np.arange(self.dim)
            inv[:, idx, idx] = 1.0 / diag
            return inv
        sv = np.linalg.svd(sig, compute_uv=False)
        _check_conditioning(sv[:, -1], sv[:, 0], floor, t)
        return np.linalg.inv(sig)

    def running(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        val = np.broadcast_to(np.asarray(self.running_cost(t, x, u), dtype=float), x.shape[:1])
        if self.cost_floor_ok and np.any(val < 0):
            raise NegativeCost(f"running cost negative at t={t}: min {val.min():.6g}")
        return val

    def terminal(self, x: np.ndarray) -> np.ndarray:
        val = np.broadcast_to(np.asarray(self.terminal_cost(x), dtype=float), x.shape[:1])
        if self.cost_floor_ok and np.any(val < 0):
            raise NegativeCost(f"terminal cost negative: min {val.min():.6g}")
        return val


def _check_conditioning(smallest, largest, floor, t):
    bad = ~(smallest >= floor * largest) | ~(smallest > 0)
    if np.any(bad):
        worst = float(np.min(smallest))
        raise NonInvertibleDiffusion(
            f"diffusion below conditioning floor at t={t}: smallest singular value {worst:.3g}"
        )


# -- validation -----------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    t: float
    x: Tuple[float, ...]
    u: Tuple[float, ...]
    sigma_min_sv: float
    sigma_max_sv: float
    running_value: float
    terminal_value: float
    costs_nonnegative: bool
    convex: bool


@dataclass(frozen=True)
class ValidationReport:
    probes: Tuple[ProbeResult, ...]

    @property
    def checks(self) -> dict:
        return {
            "ellipticity": all(p.sigma_min_sv > 0 for p in self.probes),
            "cost_floor": all(p.costs_nonnegative for p in self.probes),
            "convexity": all(p.convex for p in self.probes),
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate_problem(
    problem: ControlProblem,
    probe_points: Sequence,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    n_pairs: int = 32,
    seed: int = 0,
    convexity_tol: float = 1e-9,
) -> ValidationReport:
    """Check ellipticity, cost positivity and convexity of f in u at probes.

    ``probe_points`` is a sequence of ``(t, x, u)`` triples. Ellipticity and
    positivity violations raise; a failed convexity probe is reported.
    """
    if len(probe_points) == 0:
        raise ValueError("probe_points must be nonempty")
    rng = np.random.default_rng(seed)
    box = problem.control_box
    results = []
    for t, x, u in probe_points:
        t = float(t)
        x = np.asarray(x, dtype=float).reshape(1, problem.dim)
        u = np.asarray(u, dtype=float).reshape(1, problem.dim)
        sv = np.linalg.svd(problem.sigma_at(t, x)[0], compute_uv=False)
        if not (sv[-1] > 0 and sv[-1] >= sigma_floor * sv[0]):
            raise NonInvertibleDiffusion(
                f"diffusion singular at probe t={t}, x={x[0].tolist()}: smallest singular value {sv[-1]:.3g}"
            )
        f_val = float(np.asarray(problem.running_cost(t, x, u), dtype=float).reshape(-1)[0])
        g_val = float(np.asarray(problem.terminal_cost(x), dtype=float).reshape(-1)[0])
        nonneg = f_val >= 0 and g_val >= 0
        if problem.cost_floor_ok and not nonneg:
            raise NegativeCost(f"negative cost at probe t={t}: f={f_val:.6g}, g={g_val:.6g}")

        a = box.sample(rng, n_pairs)
        b = box.sample(rng, n_pairs)
        xs = np.repeat(x, n_pairs, axis=0)
        fa = np.asarray(problem.running_cost(t, xs, a), dtype=float)
        fb = np.asarray(problem.running_cost(t, xs, b), dtype=float)
        fm = np.asarray(problem.running_cost(t, xs, 0.5 * (a + b)), dtype=float)
        slack = convexity_tol * (1.0 + np.abs(fa) + np.abs(fb))
        convex = bool(np.all(fm <= 0.5 * (fa + fb) + slack))

        results.append(
            ProbeResult(
                t=t,
                x=tuple(x[0].tolist()),
                u=tuple(u[0].tolist()),
                sigma_min_sv=float(sv[-1]),
                sigma_max_sv=float(sv[0]),
                running_value=f_val,
                terminal_value=g_val,
                costs_nonnegative=nonneg,
                convex=convex,
            )
        )
    return ValidationReport(tuple(results))


def default_probe_points(problem: ControlProblem, n: int = 16, seed: int = 0, spread: float = 1.0):
    """Random probes around the start state, times in [0, T], controls in U."""
    rng = np.random.default_rng(seed)
    ts = rng.random(n) * problem.horizon
    xs = problem.start + spread * rng.standard_normal((n, problem.dim))
    us = problem.control_box.sample(rng, n)
    return [(float(t), x, u) for t, x, u in zip(ts, xs, us)]


# -- policies -------------------------------------------------------------


class MarkovPolicy:
    """Piecewise-constant-in-time feedback u(t_m, x), clamped into U.

    Subclasses implement :meth:`_raw`; callers use :meth:`evaluate` (by step
    index) or call the policy with a time.
    """

    def __init__(self, grid: TimeGrid, box: Box):
        self.grid = grid
        self.box = box

    def _raw(self, m: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, m: int, x: np.ndarray) -> np.ndarray:
        if not 0 <= m < self.grid.num_steps:
            raise IndexError(f"step {m} outside [0, {self.grid.num_steps})")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.broadcast_to(np.asarray(self._raw(m, x), dtype=float), x.shape)
        return self.box.project(u)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.evaluate(self.grid.step_index(t), x)

    def step_table(self, probes: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        """Per-step control values ``(M, d)`` if the policy ignores the state
        on the probe set, else None."""
        if probes is None:
            return None
        rows = []
        for m in range(self.grid.num_steps):
            vals = self.evaluate(m, probes)
            if np.any(vals != vals[0]):
                return None
            rows.append(vals[0])
        return np.array(rows)


class ConstantPolicy(MarkovPolicy):
    """One control vector per step (or one vector for all steps)."""

    def __init__(self, grid: TimeGrid, box: Box, values):
        super().__init__(grid, box)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = np.tile(values, (grid.num_steps, 1))
        if values.shape != (grid.num_steps, box.dim):
            raise ValueError(f"values must have shape ({grid.num_steps}, {box.dim}), got {values.shape}")
        self.values = box.project(values)
        self.values.setflags(write=False)

    def _raw(self, m, x):
        return np.broadcast_to(self.values[m], x.shape)

    def step_table(self, probes=None):
        return self.values.copy()


class CallablePolicy(MarkovPolicy):
    """Wraps ``fn(t, x) -> (N, d)``; evaluated at the left node of each step."""

    def __init__(self, grid: TimeGrid, box: Box, fn: Callable):
        super().__init__(grid, box)
        self.fn = fn

    def _raw(self, m, x):
        return self.fn(float(self.grid.nodes[m]), x)


def zero_policy(problem: ControlProblem, grid: TimeGrid) -> ConstantPolicy:
    """Projection of the zero control onto U at every step."""
    return ConstantPolicy(grid, problem.control_box, np.zeros(problem.dim))
