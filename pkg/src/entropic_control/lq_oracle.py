"""Ground-truth solvers for one-dimensional problems.

* :func:`riccati_value` integrates the Riccati ODE of the unconstrained LQ
  problem dX = u dt + sigma dW, cost int (q X^2 + r u^2) dt + m X_T^2.
* :func:`regularized_riccati_value` solves the same problem for the
  entropy-regularized objective, i.e. the risk-seeking criterion
  -(1/eps) log E exp(-eps * cost), which is what the alternating scheme
  converges to at fixed eps.
* :func:`hjb_grid_value` is a brute-force backward induction for any 1-d
  :class:`ControlProblem` on a space grid, with Gauss-Hermite expectations.
"""

from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .csvio import write_table
from .errors import DomainEscape
from .model import Box, CallablePolicy, ControlProblem, QuadraticControl, TimeGrid


@dataclass(frozen=True)
class LQSpec:
    q: float = 0.0
    control_weight: float = 1.0
    terminal_weight: float = 1.0
    sigma: float = 1.0
    horizon: float = 1.0
    start: float = 1.0
    bound: float = 10.0

    def __post_init__(self):
        if self.q < 0 or self.terminal_weight < 0:
            raise ValueError("q and terminal_weight must be >= 0")
        if not (self.control_weight > 0 and self.sigma > 0 and self.horizon > 0 and self.bound > 0):
            raise ValueError("control_weight, sigma, horizon and bound must be positive")

    def to_problem(self) -> ControlProblem:
        q, r, m, s = self.q, self.control_weight, self.terminal_weight, self.sigma
        return ControlProblem(
            dim=1,
            horizon=self.horizon,
            start=np.array([self.start]),
            drift=lambda t, x: np.zeros_like(x),
            diffusion=lambda t, x: np.array([[s]]),
            control_box=Box(np.array([-self.bound]), np.array([self.bound])),
            running_cost=lambda t, x, u: q * x[:, 0] ** 2 + r * u[:, 0] ** 2,
            terminal_cost=lambda x: m * x[:, 0] ** 2,
            running_cost_grad=lambda t, x, u: 2 * r * u,
            quadratic=QuadraticControl(hessian=lambda t: np.array([[2 * r]]), linear=lambda t, x: np.zeros_like(x)),
            diagonal_diffusion=True,
            name="lq",
        )


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    times: np.ndarray
    p: np.ndarray
    c: np.ndarray
    control_weight: float

    def coefficients(self, t):
        return np.interp(t, self.times, self.p), np.interp(t, self.times, self.c)

    def value(self, t, x):
        p, c = self.coefficients(t)
        return p * np.asarray(x) ** 2 + c

    def gain(self, t):
        return np.interp(t, self.times, self.p) / self.control_weight

    def feedback(self, t, x):
        return -self.gain(t) * np.asarray(x)

    def policy(self, grid: TimeGrid, box: Box) -> CallablePolicy:
        return CallablePolicy(grid, box, lambda t, x: self.feedback(t, x))


def _rk4_backward(rhs, terminal, horizon, n_steps):
    h = horizon / n_steps
    times = np.linspace(0.0, horizon, n_steps + 1)
    y = np.empty((n_steps + 1, len(terminal)))
    y[-1] = terminal
    # integrate in reversed time s = T - t, so dy/ds = -rhs
    for i in range(n_steps, 0, -1):
        t = times[i]
        cur = y[i]
        k1 = -rhs(t, cur)
        k2 = -rhs(t - h / 2, cur + h / 2 * k1)
        k3 = -rhs(t - h / 2, cur + h / 2 * k2)
        k4 = -rhs(t - h, cur + h * k3)
        y[i - 1] = cur + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return times, y


def _riccati(spec: LQSpec, quad_coeff: float, n_steps: int) -> RiccatiSolution:
    q, s2 = spec.q, spec.sigma**2

    def rhs(t, y):
        p = y[0]
        return np.array([-(q - quad_coeff * p * p), -s2 * p])

    times, y = _rk4_backward(rhs, np.array([spec.terminal_weight, 0.0]), spec.horizon, n_steps)
    return RiccatiSolution(times=times, p=y[:, 0], c=y[:, 1], control_weight=spec.control_weight)


def riccati_value(spec: LQSpec, n_steps: int = 10_000) -> RiccatiSolution:
    """-P' = q - P^2 / r, P(T) = m;  -c' = sigma^2 P, c(T) = 0;  K = P / r."""
    if n_steps < 10_000:
        raise ValueError("use at least 10^4 RK4 steps")
    return _riccati(spec, 1.0 / spec.control_weight, n_steps)


def regularized_riccati_value(spec: LQSpec, epsilon: float, n_steps: int = 10_000) -> RiccatiSolution:
    """Risk-seeking LQ: -P' = q - P^2 (1/r + 2 eps sigma^2), same c equation.

    Its value at (0, x0) is the optimum of the regularized problem and its
    feedback -P/r x is the fixed point of the alternating scheme.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return _riccati(spec, 1.0 / spec.control_weight + 2.0 * epsilon * spec.sigma**2, n_steps)


def linear_feedback_cost(spec: LQSpec, gains, grid: TimeGrid) -> float:
    """Exact expected cost of u = -k_m x on the Euler grid (no sampling).

    X_{m+1} = (1 - k_m dt) X_m + sigma sqrt(dt) Z, cost sum (q + r k_m^2) E[X_m^2] dt + m E[X_M^2].
    """
    gains = np.broadcast_to(np.asarray(gains, dtype=float), (grid.num_steps,))
    dt = grid.step
    second = spec.start**2
    total = 0.0
    for k in gains:
        total += (spec.q + spec.control_weight * k * k) * second * dt
        second = (1 - k * dt) ** 2 * second + spec.sigma**2 * dt
    return total + spec.terminal_weight * second


# -- brute-force HJB --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HJBTable:
    grid: TimeGrid
    xs: np.ndarray
    values: np.ndarray  # (M+1, J)
    controls: np.ndarray  # (M, J)

    def value(self, m: int, x) -> np.ndarray:
        return _interp_linear(self.xs, self.values[m], np.asarray(x, dtype=float))

    def control(self, m: int, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.xs, self.controls[m])

    def policy(self, box: Box) -> CallablePolicy:
        def fn(t, x):
            return self.control(self.grid.step_index(t), x[:, 0])[:, None]

        return CallablePolicy(self.grid, box, fn)

    def write_csv(self, path, comments=()):
        nodes = self.grid.nodes
        rows = []
        for m in range(self.grid.num_steps + 1):
            for j, x in enumerate(self.xs):
                u = self.controls[m, j] if m < self.grid.num_steps else ""
                rows.append([float(nodes[m]), float(x), self.values[m, j], u])
        return write_table(path, ["t", "x", "V", "u_star"], rows, comments)


def _interp_linear(xs, ys, q):
    """Piecewise-linear interpolation with linear extrapolation at both ends."""
    idx = np.clip(np.searchsorted(xs, q) - 1, 0, xs.size - 2)
    x0 = xs[idx]
    w = (q - x0) / (xs[idx + 1] - x0)
    return ys[idx] + w * (ys[idx + 1] - ys[idx])


def hjb_grid_value(
    problem: ControlProblem,
    grid: TimeGrid,
    x_min: float,
    x_max: float,
    n_space: int = 400,
    u_points: int = 41,
    refine_levels: int = 2,
    gh_nodes: int = 15,
    padding: Optional[float] = None,
    escape_tol: float = 1e-6,
    interpolation: str = "cubic",
) -> HJBTable:
    """Backward induction V(t_m, x) = min_u f dt + E V(t_{m+1}, x + (b + u) dt + sigma sqrt(dt) Z).

    The u-minimum is a grid search over U, re-gridded ``refine_levels``
    times around the best node. Nodes farther than ``padding`` from the
    domain edge must keep their quadrature mass inside the domain.

    ``interpolation`` is "cubic" (not-a-knot spline, exact on quadratics) or
    "linear". Linear interpolation overstates a convex V by about V'' h^2 / 8
    per step, and that bias accumulates over the time grid.
    """
    if interpolation not in ("cubic", "linear"):
        raise ValueError("interpolation must be 'cubic' or 'linear'")
    if problem.dim != 1:
        raise ValueError("hjb_grid_value handles one-dimensional problems only")
    if gh_nodes < 11:
        raise ValueError("use at least 11 Gauss-Hermite nodes")
    if not x_max > x_min:
        raise ValueError("x_max must exceed x_min")
    padding = 0.25 * (x_max - x_min) if padding is None else padding
    xs = np.linspace(x_min, x_max, n_space)
    z, wq = np.polynomial.hermite_e.hermegauss(gh_nodes)
    wq = wq / wq.sum()
    lo, hi = float(problem.control_box.lower[0]), float(problem.control_box.upper[0])
    dt = grid.step
    sq = np.sqrt(dt)
    nodes = grid.nodes
    M = grid.num_steps
    inner = (xs >= x_min + padding) & (xs <= x_max - padding)
    X = xs[:, None]

    values = np.empty((M + 1, n_space))
    controls = np.empty((M, n_space))
    values[M] = problem.terminal(X)
    for m in range(M - 1, -1, -1):
        t = float(nodes[m])
        b = problem.drift_at(t, X)[:, 0]
        sig = problem.sigma_at(t, X)[:, 0, 0]
        if interpolation == "cubic":
            vnext = CubicSpline(xs, values[m + 1])
        else:
            vnext = partial(_interp_linear, xs, values[m + 1])

        def q_values(u):  # u: (J, L)
            J, L = u.shape
            y = (xs + b * dt)[:, None, None] + u[:, :, None] * dt + (sig * sq)[:, None, None] * z[None, None, :]
            ev = vnext(y.reshape(-1)).reshape(J, L, -1) @ wq
            f = problem.running(t, np.repeat(xs, L)[:, None], u.reshape(-1, 1)).reshape(J, L)
            return f * dt + ev

        ugrid = np.broadcast_to(np.linspace(lo, hi, u_points), (n_space, u_points))
        qv = q_values(ugrid)
        best = np.argmin(qv, axis=1)
        rows = np.arange(n_space)
        ubest = ugrid[rows, best]
        vbest = qv[rows, best]
        width = (hi - lo) / max(u_points - 1, 1)
        for _ in range(refine_levels):
            a = np.maximum(ubest - width, lo)
            c = np.minimum(ubest + width, hi)
            ugrid = a[:, None] + (c - a)[:, None] * np.linspace(0.0, 1.0, u_points)[None, :]
            qv = q_values(ugrid)
            best = np.argmin(qv, axis=1)
            improve = qv[rows, best] < vbest
            ubest = np.where(improve, ugrid[rows, best], ubest)
            vbest = np.where(improve, qv[rows, best], vbest)
            width = 2 * width / max(u_points - 1, 1)

        y = xs + (b + ubest) * dt
        spread = (sig * sq)[:, None] * z[None, :] + y[:, None]
        outside = ((spread < x_min) | (spread > x_max)) @ wq
        if np.any(outside[inner] > escape_tol):
            raise DomainEscape(
                f"quadrature mass {outside[inner].max():.3g} leaves [{x_min}, {x_max}] at step {m}; widen the domain"
            )
        values[m] = vbest
        controls[m] = ubest
    return HJBTable(grid=grid, xs=xs, values=values, controls=controls)
