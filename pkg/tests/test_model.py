import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropic_control import (
    Box,
    CallablePolicy,
    ConstantPolicy,
    ControlProblem,
    TimeGrid,
    default_probe_points,
    validate_problem,
    zero_policy,
)
from entropic_control.errors import NegativeCost, NonInvertibleDiffusion
from entropic_control.lq_oracle import LQSpec


def _problem(**kw):
    base = dict(
        dim=1,
        horizon=1.0,
        start=np.array([0.0]),
        drift=lambda t, x: np.zeros_like(x),
        diffusion=lambda t, x: np.array([[1.0]]),
        control_box=Box([-1.0], [1.0]),
        running_cost=lambda t, x, u: u[:, 0] ** 2,
        terminal_cost=lambda x: x[:, 0] ** 2,
    )
    base.update(kw)
    return ControlProblem(**base)


def test_time_grid_nodes_and_index():
    g = TimeGrid(2.0, 4)
    assert g.step == 0.5
    np.testing.assert_allclose(g.nodes, [0, 0.5, 1.0, 1.5, 2.0])
    assert g.step_index(0.0) == 0
    assert g.step_index(0.49) == 0
    assert g.step_index(0.5) == 1
    assert g.step_index(2.0) == 3


@pytest.mark.parametrize("args", [(1.0, 0), (0.0, 5), (-1.0, 3), (1.0, 2.5)])
def test_time_grid_rejects_bad_input(args):
    with pytest.raises(ValueError):
        TimeGrid(*args)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2))
def test_box_projection_is_idempotent_and_inside(u):
    box = Box([-1.0, 0.0], [2.0, 0.5])
    p = box.project(np.array([u]))
    assert box.contains(p).all()
    np.testing.assert_array_equal(box.project(p), p)


def test_lq_problem_passes_validation():
    problem = LQSpec().to_problem()
    report = validate_problem(problem, default_probe_points(problem))
    assert report.passed
    assert set(report.checks) == {"ellipticity", "cost_floor", "convexity"}


def test_singular_diffusion_raises():
    problem = _problem(dim=2, start=np.zeros(2), control_box=Box([-1, -1], [1, 1]),
                       diffusion=lambda t, x: np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(NonInvertibleDiffusion):
        validate_problem(problem, default_probe_points(problem))
    with pytest.raises(NonInvertibleDiffusion):
        problem.sigma_inverse(0.0, np.zeros((3, 2)))


def test_negative_cost_raises():
    problem = _problem(terminal_cost=lambda x: x[:, 0] - 10.0)
    with pytest.raises(NegativeCost):
        validate_problem(problem, default_probe_points(problem))
    with pytest.raises(NegativeCost):
        problem.terminal(np.zeros((2, 1)))


def test_nonconvex_running_cost_is_reported():
    problem = _problem(running_cost=lambda t, x, u: 1.0 - u[:, 0] ** 2)
    report = validate_problem(problem, default_probe_points(problem))
    assert not report.checks["convexity"]
    assert not report.passed


def test_sigma_inverse_general_matrix():
    sig = np.array([[2.0, 0.5], [0.0, 1.0]])
    problem = _problem(dim=2, start=np.zeros(2), control_box=Box([-1, -1], [1, 1]), diffusion=lambda t, x: sig)
    inv = problem.sigma_inverse(0.0, np.zeros((4, 2)))
    np.testing.assert_allclose(inv[0] @ sig, np.eye(2), atol=1e-14)


def test_constant_policy_is_clamped():
    grid = TimeGrid(1.0, 3)
    box = Box([-1.0], [1.0])
    pol = ConstantPolicy(grid, box, np.array([[-5.0], [0.5], [7.0]]))
    np.testing.assert_array_equal(pol.step_table()[:, 0], [-1.0, 0.5, 1.0])
    np.testing.assert_array_equal(pol(0.99, np.zeros((2, 1))), [[1.0], [1.0]])


def test_callable_policy_uses_left_node_and_clamps():
    grid = TimeGrid(1.0, 4)
    pol = CallablePolicy(grid, Box([-1.0], [1.0]), lambda t, x: 10 * t + x)
    u = pol.evaluate(1, np.array([[0.0], [-3.0]]))
    np.testing.assert_allclose(u[:, 0], [1.0, -0.5])
    with pytest.raises(IndexError):
        pol.evaluate(4, np.zeros((1, 1)))
    assert pol.step_table(np.array([[0.0], [1.0]])) is None


def test_zero_policy_projects_into_box():
    problem = _problem(control_box=Box([0.5], [1.0]))
    pol = zero_policy(problem, TimeGrid(1.0, 2))
    np.testing.assert_array_equal(pol.step_table(), [[0.5], [0.5]])


def test_problem_shape_checks():
    with pytest.raises(ValueError):
        _problem(start=np.zeros(2))
    with pytest.raises(ValueError):
        _problem(control_box=Box([0, 0], [1, 1]))
