"""Pointwise minimization of

    F_beta(t, x, v) = f(t, x, v) + 1/(2 eps) |sigma^{-1}(t, x) (beta - v)|^2

over the control box, and the Markov policy built from a drift estimate.

Two solvers: a per-coordinate closed form when f is declared quadratic with
diagonal Hessian and sigma is diagonal, and a batched projected gradient
with Barzilai-Borwein steps and backtracking otherwise. For other quadratic
f the unconstrained stationary point is tried first and kept when it lies
in the box.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .csvio import write_table
from .errors import NoConvergence
from .model import DEFAULT_SIGMA_FLOOR, Box, ControlProblem, MarkovPolicy, QuadraticControl
from .regress import DriftEstimate

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 500
FD_STEP = 1e-5


class _Batch:
    """N independent objectives sharing t, eps and the cost callables."""

    def __init__(self, t, x, beta, a, eps, running_cost=None, running_cost_grad=None, hessian=None, linear=None):
        self.t = t
        self.x = x
        self.beta = beta
        self.a = a  # (sigma sigma')^{-1}, shape (N, d, d)
        self.eps = eps
        self.f = running_cost
        self.fgrad = running_cost_grad
        self.hessian = hessian
        self.linear = linear

    def subset(self, rows):
        return _Batch(
            self.t,
            self.x[rows],
            self.beta[rows],
            self.a[rows],
            self.eps,
            self.f,
            self.fgrad,
            self.hessian,
            None if self.linear is None else self.linear[rows],
        )

    def _penalty(self, u):
        r = self.beta - u
        ar = np.einsum("nij,nj->ni", self.a, r)
        return np.sum(r * ar, axis=1) / (2 * self.eps), -ar / self.eps

    def value(self, u):
        pen, _ = self._penalty(u)
        if self.hessian is not None:
            return 0.5 * np.einsum("ni,ij,nj->n", u, self.hessian, u) + np.sum(self.linear * u, axis=1) + pen
        return np.asarray(self.f(self.t, self.x, u), dtype=float) + pen

    def grad(self, u):
        _, pen_grad = self._penalty(u)
        if self.hessian is not None:
            return u @ self.hessian.T + self.linear + pen_grad
        if self.fgrad is not None:
            return np.asarray(self.fgrad(self.t, self.x, u), dtype=float) + pen_grad
        return _central_difference(self.f, self.t, self.x, u) + pen_grad

    def curvature_bound(self):
        lam = np.linalg.eigvalsh(self.a)[:, -1] / self.eps
        if self.hessian is not None:
            lam = lam + max(np.linalg.eigvalsh(self.hessian)[-1], 0.0)
        return lam


def _central_difference(f, t, x, u):
    g = np.empty_like(u)
    h = FD_STEP * (1.0 + np.abs(u))
    for i in range(u.shape[1]):
        up = u.copy()
        dn = u.copy()
        up[:, i] += h[:, i]
        dn[:, i] -= h[:, i]
        g[:, i] = (np.asarray(f(t, x, up), dtype=float) - np.asarray(f(t, x, dn), dtype=float)) / (2 * h[:, i])
    return g


def _residual(box, u, g):
    return np.max(np.abs(u - box.project(u - g)), axis=1)


def projected_gradient(batch: _Batch, box: Box, u0=None, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    """Minimize every objective in ``batch`` over ``box``.

    Returns the minimizers (N, d) and the final projected-gradient residuals.
    Raises NoConvergence when some residual stays above ``tol``.
    """
    n = batch.beta.shape[0]
    u = box.project(batch.beta if u0 is None else np.broadcast_to(u0, batch.beta.shape)).astype(float, copy=True)
    fu = batch.value(u)
    g = batch.grad(u)
    step = 1.0 / np.maximum(batch.curvature_bound(), 1e-300)
    res = _residual(box, u, g)
    done = res <= tol
    for _ in range(max_iters):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        sub = batch.subset(act)
        ua, ga, fa, al = u[act], g[act], fu[act], step[act].copy()
        pending = np.ones(act.size, dtype=bool)
        un = ua.copy()
        fn = fa.copy()
        for _ in range(60):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            trial = box.project(ua[idx] - al[idx, None] * ga[idx])
            d = trial - ua[idx]
            ft = sub.subset(idx).value(trial)
            bound = fa[idx] + np.sum(ga[idx] * d, axis=1) + np.sum(d * d, axis=1) / (2 * al[idx])
            ok = ft <= bound + 1e-14 * (1.0 + np.abs(fa[idx]))
            un[idx[ok]] = trial[ok]
            fn[idx[ok]] = ft[ok]
            pending[idx[ok]] = False
            al[idx[~ok]] *= 0.5
        gn = sub.grad(un)
        s = un - ua
        y = gn - ga
        sy = np.sum(s * y, axis=1)
        ss = np.sum(s * s, axis=1)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * al)
        step[act] = np.clip(bb, 1e-12 * step[act], 1e12 * step[act])
        u[act] = un
        fu[act] = fn
        g[act] = gn
        res[act] = _residual(box, un, gn)
        done[act] = res[act] <= tol
    if not np.all(done):
        worst = float(res.max())
        raise NoConvergence(
            f"projected gradient residual {worst:.3g} > {tol:g} after {max_iters} iterations ({int((~done).sum())} of {n} points)"
        )
    return u, res


def _interior_solve(hess, a, beta, linear, eps):
    """Stationary point of a quadratic F_beta, ignoring the box."""
    k = hess[None] + a / eps
    rhs = np.einsum("nij,nj->ni", a, beta) / eps - linear
    return np.linalg.solve(k, rhs[:, :, None])[:, :, 0]


def closed_form_diagonal(beta, a_diag, h_diag, linear, eps, box: Box):
    """Separable minimizer: (a_i beta_i / eps - c_i) / (h_i + a_i / eps), clamped."""
    u = (a_diag * beta / eps - linear) / (h_diag + a_diag / eps)
    return box.project(u)


@dataclass(frozen=True, eq=False)
class PointwiseObjective:
    """F_beta at a single (t, x)."""

    t: float
    x: np.ndarray
    beta: np.ndarray
    sigma_inv: np.ndarray
    epsilon: float
    running_cost: Callable
    running_cost_grad: Optional[Callable] = None
    quadratic: Optional[QuadraticControl] = None

    def _batch(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        si = np.asarray(self.sigma_inv, dtype=float)
        a = (si.T @ si)[None]
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if self.quadratic is not None:
            return _Batch(
                self.t, x, beta, a, self.epsilon,
                hessian=self.quadratic.hessian_at(self.t),
                linear=self.quadratic.linear_at(self.t, x),
            )
        return _Batch(self.t, x, beta, a, self.epsilon, self.running_cost, self.running_cost_grad)

    def value(self, u) -> float:
        return float(self._batch().value(np.atleast_2d(np.asarray(u, dtype=float)))[0])

    def gradient(self, u) -> np.ndarray:
        return self._batch().grad(np.atleast_2d(np.asarray(u, dtype=float)))[0]

    def closed_form_available(self) -> bool:
        if self.quadratic is None:
            return False
        si = np.asarray(self.sigma_inv, dtype=float)
        return self.quadratic.is_diagonal(self.t) and not np.any(si - np.diag(np.diag(si)))


def minimize_pointwise(
    obj: PointwiseObjective,
    box: Box,
    method: str = "auto",
    start=None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """Unique minimizer of F_beta over ``box``.

    ``method`` is ``"auto"``, ``"closed_form"`` or ``"iterative"``; the
    iterative solver starts from ``start`` (default: projection of beta).
    """
    if not obj.epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not np.all(np.isfinite(obj.sigma_inv)):
        raise ValueError("sigma_inv must be finite")
    use_closed = method == "closed_form" or (method == "auto" and obj.closed_form_available())
    if use_closed:
        if not obj.closed_form_available():
            raise ValueError("closed form needs a diagonal quadratic cost and diagonal sigma")
        batch = obj._batch()
        return closed_form_diagonal(
            batch.beta, np.diagonal(batch.a, axis1=1, axis2=2),
            np.diag(batch.hessian), batch.linear, obj.epsilon, box,
        )[0]
    if method not in ("auto", "iterative"):
        raise ValueError(f"unknown method {method!r}")
    u, _ = projected_gradient(obj._batch(), box, start, tol, max_iters)
    return u[0]


class DriftPolicy(MarkovPolicy):
    """u(t, x) = argmin_v F_{beta_m}(t_m, x, v) for t in [t_m, t_{m+1}).

    Evaluated lazily per query. When f is declared quadratic, identical
    objectives inside one query batch are solved once; for degree-0 drifts
    with state-free control terms this collapses a batch to a single solve.
    """

    def __init__(
        self,
        drift: DriftEstimate,
        problem: ControlProblem,
        epsilon: float,
        tol: float = DEFAULT_TOL,
        max_iters: int = DEFAULT_MAX_ITERS,
        dedupe: bool = True,
        method: str = "auto",
        sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    ):
        super().__init__(drift.grid, problem.control_box)
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.drift = drift
        self.problem = problem
        self.epsilon = float(epsilon)
        self.tol = tol
        self.max_iters = max_iters
        self.dedupe = dedupe
        self.method = method
        self.sigma_floor = sigma_floor

    def _raw(self, m, x):
        problem = self.problem
        t = float(self.grid.nodes[m])
        beta = self.drift.evaluate(m, x)
        si = problem.sigma_inverse(t, x, self.sigma_floor)
        a = np.einsum("nki,nkj->nij", si, si)
        if problem.quadratic is None:
            batch = _Batch(t, x, beta, a, self.epsilon, problem.running_cost, problem.running_cost_grad)
            return projected_gradient(batch, self.box, None, self.tol, self.max_iters)[0]

        hess = problem.quadratic.hessian_at(t)
        lin = problem.quadratic.linear_at(t, x)
        inverse = None
        if self.dedupe:
            key = np.hstack([beta, lin, a.reshape(a.shape[0], -1)])
            if np.all(key == key[0]):
                inverse = np.zeros(key.shape[0], dtype=np.intp)
                key = key[:1]
            elif np.unique(key[:, 0]).size < key.shape[0]:
                key, inverse = np.unique(key, axis=0, return_inverse=True)
                inverse = inverse.reshape(-1)
            d = problem.dim
            beta = key[:, :d]
            lin = key[:, d : 2 * d]
            a = key[:, 2 * d :].reshape(-1, d, d)
            x = x[0:1].repeat(key.shape[0], axis=0)  # x is unused by quadratic solves
        diag_a = not np.any(a - np.einsum("nii->ni", a)[:, :, None] * np.eye(problem.dim))
        closed = self.method == "closed_form" or (
            self.method == "auto" and diag_a and problem.quadratic.is_diagonal(t)
        )
        if closed:
            u = closed_form_diagonal(beta, np.einsum("nii->ni", a), np.diag(hess), lin, self.epsilon, self.box)
        else:
            u = _interior_solve(hess, a, beta, lin, self.epsilon)
            out = ~self.box.contains(u)
            if np.any(out):
                batch = _Batch(t, x[out], beta[out], a[out], self.epsilon, hessian=hess, linear=lin[out])
                u[out] = projected_gradient(batch, self.box, None, self.tol, self.max_iters)[0]
        return u if inverse is None else u[inverse]


def build_policy(drift: DriftEstimate, problem: ControlProblem, epsilon: float, **kwargs) -> DriftPolicy:
    if drift.coeffs.shape[0] != drift.grid.num_steps:
        raise ValueError("drift estimate does not cover every step")
    return DriftPolicy(drift, problem, epsilon, **kwargs)


def write_policy_csv(policy: MarkovPolicy, path, probes=None, comments=(), transform=None):
    """Per-step control table when the policy is state-free on ``probes``,
    otherwise the drift coefficients behind the implicit policy.

    ``transform`` maps framework controls to reported units row-wise.
    """
    table = policy.step_table(probes)
    nodes = policy.grid.nodes
    d = policy.box.dim
    if table is not None:
        if transform is not None:
            table = transform(table)
        rows = [[m, float(nodes[m])] + table[m].tolist() for m in range(policy.grid.num_steps)]
        return write_table(path, ["step", "t"] + [f"u_{i + 1}" for i in range(d)], rows, comments)
    if isinstance(policy, DriftPolicy):
        note = "policy is implicit: u(t,x) = argmin over U of F_beta with beta_m(x) = sum_j c_j x^exponent_j"
        drift = policy.drift
        rows = []
        for m in range(policy.grid.num_steps):
            for j, alpha in enumerate(drift.basis.exponents):
                rows.append([m, float(nodes[m]), j, "-".join(map(str, alpha))] + drift.coeffs[m, j].tolist())
        columns = ["step", "t", "feature_index", "exponent"] + [f"c_{i + 1}" for i in range(d)]
        return write_table(path, columns, rows, list(comments) + [note])
    raise ValueError("policy depends on the state and has no tabular export")
