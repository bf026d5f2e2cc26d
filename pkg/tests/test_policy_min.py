import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropic_control import Box, PointwiseObjective, TimeGrid, minimize_pointwise, simulate_paths, zero_policy
from entropic_control.csvio import read_table
from entropic_control.errors import NoConvergence
from entropic_control.lq_oracle import LQSpec
from entropic_control.model import QuadraticControl
from entropic_control.policy_min import DriftPolicy, build_policy, write_policy_csv
from entropic_control.regress import PolynomialBasis, fit_drift
from entropic_control.twist import weights_from_costs


def _quad_cost(t, x, u):
    return np.sum(u**2, axis=1)


def test_clipped_example():
    # f = v^2, sigma = 1, eps = 0.5, beta = 2 on U = [0, 1]
    obj = PointwiseObjective(0.0, np.zeros(1), np.array([2.0]), np.eye(1), 0.5, _quad_cost)
    box = Box([0.0], [1.0])
    u = minimize_pointwise(obj, box)
    grid = np.linspace(0.0, 1.0, 1_000_001)
    ref = grid[np.argmin(grid**2 + (2.0 - grid) ** 2)]
    assert u[0] == pytest.approx(ref, abs=1e-6)
    assert u[0] == pytest.approx(1.0, abs=1e-6)


def test_interior_minimizer_of_quadratic():
    # f = v^2, unconstrained minimizer beta / (1 + 2 eps)
    obj = PointwiseObjective(0.0, np.zeros(1), np.array([0.6]), np.eye(1), 0.5, _quad_cost)
    assert minimize_pointwise(obj, Box([-5.0], [5.0]))[0] == pytest.approx(0.3, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 10), st.floats(0.2, 3), st.floats(0, 4), st.floats(-2, 2),
)
def test_closed_form_matches_iterative(b1, b2, eps, s, h, c):
    quad = QuadraticControl(lambda t: np.diag([h, 2 * h]), lambda t, x: np.full_like(x, c))
    obj = PointwiseObjective(0.0, np.zeros(2), np.array([b1, b2]), np.diag([1 / s, 2 / s]), eps, None, quadratic=quad)
    box = Box([-1.0, -0.5], [1.0, 2.0])
    assert obj.closed_form_available()
    a = minimize_pointwise(obj, box, method="closed_form")
    b = minimize_pointwise(obj, box, method="iterative")
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_closed_form_refused_for_coupled_hessian():
    quad = QuadraticControl(lambda t: np.array([[2.0, 1.0], [1.0, 2.0]]), lambda t, x: np.zeros_like(x))
    obj = PointwiseObjective(0.0, np.zeros(2), np.ones(2), np.eye(2), 1.0, None, quadratic=quad)
    assert not obj.closed_form_available()
    with pytest.raises(ValueError):
        minimize_pointwise(obj, Box([-1, -1], [1, 1]), method="closed_form")


def test_finite_difference_gradient_path():
    f = lambda t, x, u: np.exp(u[:, 0]) + u[:, 0] ** 2  # noqa: E731
    obj = PointwiseObjective(0.0, np.zeros(1), np.array([0.0]), np.eye(1), 1.0, f)
    u = minimize_pointwise(obj, Box([-3.0], [3.0]))
    # stationarity: e^u + 2u + u = 0
    assert np.exp(u[0]) + 3 * u[0] == pytest.approx(0.0, abs=1e-7)
    np.testing.assert_allclose(obj.gradient(u), [0.0], atol=1e-7)


def test_no_convergence_reported():
    f = lambda t, x, u: np.exp(3 * u[:, 0]) + np.exp(-3 * u[:, 1])  # noqa: E731
    obj = PointwiseObjective(0.0, np.zeros(2), np.array([5.0, -5.0]), np.eye(2), 100.0, f)
    with pytest.raises(NoConvergence):
        minimize_pointwise(obj, Box([-3, -3], [3, 3]), method="iterative", max_iters=1)


def test_invalid_inputs():
    obj = PointwiseObjective(0.0, np.zeros(1), np.zeros(1), np.eye(1), 0.0, _quad_cost)
    with pytest.raises(ValueError):
        minimize_pointwise(obj, Box([0.0], [1.0]))
    obj = PointwiseObjective(0.0, np.zeros(1), np.zeros(1), np.eye(1), 1.0, _quad_cost)
    with pytest.raises(ValueError):
        minimize_pointwise(obj, Box([0.0], [1.0]), method="newton")


def _lq_drift(n=2000, steps=5, degree=1):
    problem = LQSpec(bound=0.5).to_problem()
    grid = TimeGrid(1.0, steps)
    batch = simulate_paths(problem, zero_policy(problem, grid), n, grid, 1)
    w = weights_from_costs(np.zeros(n), 1.0)
    return problem, fit_drift(batch, w, problem, PolynomialBasis(degree, 1))


def test_drift_policy_matches_pointwise_solution():
    problem, drift = _lq_drift()
    eps = 0.7
    pol = build_policy(drift, problem, eps)
    x = np.linspace(-3, 3, 13)[:, None]
    u = pol.evaluate(2, x)
    beta = drift.evaluate(2, x)[:, 0]
    # f = v^2, sigma = 1: u = clip(beta / (1 + 2 eps))
    np.testing.assert_allclose(u[:, 0], np.clip(beta / (1 + 2 * eps), -0.5, 0.5), atol=1e-12)
    iterative = DriftPolicy(drift, problem, eps, method="iterative")
    np.testing.assert_allclose(iterative.evaluate(2, x), u, atol=1e-9)


def test_policy_csv_modes(tmp_path):
    problem, drift = _lq_drift(degree=0)
    pol = build_policy(drift, problem, 1.0)
    write_policy_csv(pol, tmp_path / "table.csv", probes=np.array([[0.0], [1.0]]), comments=["c"])
    cols, rows = read_table(tmp_path / "table.csv")
    assert cols == ["step", "t", "u_1"] and len(rows) == 5

    problem, drift = _lq_drift(degree=1)
    pol = build_policy(drift, problem, 1.0)
    write_policy_csv(pol, tmp_path / "coef.csv", probes=np.array([[0.0], [1.0]]))
    text = (tmp_path / "coef.csv").read_text()
    assert "implicit" in text.splitlines()[0]
    cols, rows = read_table(tmp_path / "coef.csv")
    assert cols[:4] == ["step", "t", "feature_index", "exponent"] and len(rows) == 10


def _zero_cost(t, x, u):
    return np.zeros(u.shape[0])


def test_zero_cost_returns_projection_of_beta():
    box = Box([0.0, -1.0], [1.0, 1.0])
    obj = PointwiseObjective(0.0, np.zeros(2), np.array([0.25, -0.5]), np.eye(2), 1.0, _zero_cost)
    np.testing.assert_array_equal(minimize_pointwise(obj, box), [0.25, -0.5])
    obj = PointwiseObjective(0.0, np.zeros(1), np.array([3.0]), np.eye(1), 1.0, _zero_cost)
    assert minimize_pointwise(obj, Box([0.0], [1.0]))[0] == 1.0


def test_zero_drift_zero_cost_policy_projects_zero():
    problem, drift = _lq_drift(degree=0)
    drift = type(drift)(drift.grid, drift.basis, np.zeros_like(drift.coeffs), drift.diagnostics)
    from dataclasses import replace

    problem = replace(problem, running_cost=lambda t, x, u: np.zeros(x.shape[0]), quadratic=None,
                      running_cost_grad=None, control_box=Box([0.2], [1.0]))
    pol = build_policy(drift, problem, 1.0)
    np.testing.assert_array_equal(pol.evaluate(3, np.array([[0.0], [5.0]])), [[0.2], [0.2]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_first_order_optimality(seed):
    rng = np.random.default_rng(seed)
    d = 2
    m = rng.normal(size=(d, d))
    c = rng.normal(size=d)
    f = lambda t, x, u: 0.5 * np.sum((u @ m) ** 2, axis=1) + u @ c + np.exp(u[:, 0])  # noqa: E731
    g = lambda t, x, u: (u @ m) @ m.T + c + np.eye(d)[0] * np.exp(u[:, :1])  # noqa: E731
    box = Box([-1.0, -2.0], [1.5, 0.5])
    obj = PointwiseObjective(0.0, np.zeros(d), rng.normal(0, 2, d), np.diag(rng.uniform(0.5, 2, d)),
                             rng.uniform(0.1, 5), f, g)
    u = minimize_pointwise(obj, box)
    grad = obj.gradient(u)
    assert np.max(np.abs(u - box.project(u - grad))) <= 1e-8


def test_policy_outputs_inside_box_on_random_queries():
    from entropic_control.tcl_bench import TargetProfile, build_tcl_problem, default_params

    problem = build_tcl_problem(default_params(2), TargetProfile.constant(0.5, 2.0), 2.0)
    grid = TimeGrid(2.0, 8)
    batch = simulate_paths(problem, zero_policy(problem, grid), 500, grid, 0)
    drift = fit_drift(batch, weights_from_costs(np.zeros(500), 1.0), problem, PolynomialBasis(2, 2))
    pol = build_policy(drift, problem, 20.0)
    rng = np.random.default_rng(0)
    ms = rng.integers(0, 8, 10_000)
    xs = 22 + 5 * rng.normal(size=(10_000, 2))
    for m in range(8):
        u = pol.evaluate(m, xs[ms == m])
        assert problem.control_box.contains(u).all()
    # repeated identical queries give identical answers
    np.testing.assert_array_equal(pol.evaluate(2, xs[:50]), pol.evaluate(2, xs[:50]))


def test_interior_solve_matches_projected_gradient():
    from entropic_control.policy_min import _Batch, projected_gradient
    from entropic_control.tcl_bench import TargetProfile, build_tcl_problem, default_params

    problem = build_tcl_problem(default_params(3), TargetProfile.constant(0.5, 2.0), 2.0)
    grid = TimeGrid(2.0, 8)
    batch = simulate_paths(problem, zero_policy(problem, grid), 2000, grid, 0)
    drift = fit_drift(batch, weights_from_costs(np.zeros(2000), 1.0), problem, PolynomialBasis(1, 3))
    pol = build_policy(drift, problem, 20.0)
    m = 4
    x = 22.0 + 8.0 * np.random.default_rng(1).normal(size=(2000, 3))
    t = float(grid.nodes[m])
    si = problem.sigma_inverse(t, x)
    a = np.einsum("nki,nkj->nij", si, si)
    ref = _Batch(t, x, drift.evaluate(m, x), a, 20.0, hessian=problem.quadratic.hessian_at(t),
                 linear=problem.quadratic.linear_at(t, x))
    expected, _ = projected_gradient(ref, problem.control_box)
    got = pol.evaluate(m, x)
    np.testing.assert_allclose(got, expected, atol=1e-8)
    inside = problem.control_box.contains(got) & np.all(
        (got > problem.control_box.lower + 1e-6) & (got < problem.control_box.upper - 1e-6), axis=1)
    assert 0 < inside.sum() < got.shape[0]
