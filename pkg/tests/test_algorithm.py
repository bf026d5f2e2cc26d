import numpy as np
import pytest

from entropic_control import SolveConfig, TimeGrid, descent_check, epsilon_gap_bound, solve
from entropic_control.algorithm import IterationReport, write_reports_csv
from entropic_control.csvio import read_table
from entropic_control.errors import DegenerateWeights
from entropic_control.evaluation import policy_costs
from entropic_control.lq_oracle import LQSpec, linear_feedback_cost, regularized_riccati_value, riccati_value


def _report(k, qp, se=0.01):
    return IterationReport(k, qp, se, qp + 0.1, se, 100.0, 0.001, 0.1, 1.0)


def test_zero_iterations_return_initial_policy():
    problem = LQSpec().to_problem()
    grid = TimeGrid(1.0, 10)
    policy, reports = solve(problem, SolveConfig(epsilon=1.0, iterations=0, n_paths=10, grid=grid))
    assert reports == []
    np.testing.assert_array_equal(policy.step_table(), 0.0)


def test_config_validation():
    grid = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        SolveConfig(epsilon=0.0, iterations=1, n_paths=10, grid=grid)
    with pytest.raises(ValueError):
        SolveConfig(epsilon=1.0, iterations=-1, n_paths=10, grid=grid)
    with pytest.raises(ValueError):
        solve(LQSpec().to_problem(), SolveConfig(epsilon=1.0, iterations=1, n_paths=10, grid=TimeGrid(2.0, 10)))


def test_report_invariants_and_determinism():
    problem = LQSpec().to_problem()
    cfg = SolveConfig(epsilon=1.0, iterations=4, n_paths=3000, grid=TimeGrid(1.0, 20), degree=1, master_seed=7)
    _, reports = solve(problem, cfg)
    _, again = solve(problem, cfg)
    assert [r.cost_QP for r in reports] == [r.cost_QP for r in again]
    assert [r.k for r in reports] == [1, 2, 3, 4]
    for r in reports:
        assert 1.0 <= r.ess <= cfg.n_paths
        assert 0 < r.min_weight <= r.max_weight < 1
    # cost_PP_k and cost_QP_{k+1} come from the same batch, so Jensen orders them exactly
    for prev, cur in zip(reports, reports[1:]):
        assert prev.cost_PP >= cur.cost_QP
    for r in reports:
        assert r.cost_PP >= r.cost_QP - 3 * np.hypot(r.cost_PP_se, r.cost_QP_se)


def test_threads_do_not_change_results():
    problem = LQSpec().to_problem()
    kw = dict(epsilon=1.0, iterations=2, n_paths=2000, grid=TimeGrid(1.0, 10), degree=2, master_seed=3)
    _, a = solve(problem, SolveConfig(**kw, threads=1))
    _, b = solve(problem, SolveConfig(**kw, threads=4))
    assert [r.cost_QP for r in a] == [r.cost_QP for r in b]
    assert [r.cost_PP for r in a] == [r.cost_PP for r in b]


def test_degenerate_weights_report_iteration():
    problem = LQSpec(sigma=3.0).to_problem()
    cfg = SolveConfig(epsilon=200.0, iterations=2, n_paths=50, grid=TimeGrid(1.0, 5), ess_floor=10.0)
    with pytest.raises(DegenerateWeights) as info:
        solve(problem, cfg)
    assert info.value.iteration == 1
    assert "iteration 1" in str(info.value)


def test_converges_to_regularized_fixed_point_small_noise():
    spec = LQSpec(sigma=0.3)
    problem = spec.to_problem()
    grid = TimeGrid(1.0, 25)
    cfg = SolveConfig(epsilon=2.0, iterations=10, n_paths=5000, grid=grid, degree=1, master_seed=3)
    policy, reports = solve(problem, cfg)
    y = policy_costs(problem, policy, 20_000, grid, seed=3)
    fixed = linear_feedback_cost(spec, regularized_riccati_value(spec, 2.0).gain(grid.nodes[:-1]), grid)
    v = riccati_value(spec).value(0.0, 1.0)
    assert abs(y.mean() - fixed) / fixed < 0.02
    assert abs(y.mean() - v) / v < 0.02
    # feedback slope averaged over steps; single-step slopes carry ~0.2 of MC noise and
    # the first steps are not identified (every path starts at x0)
    x = np.array([[0.5], [1.0]])
    steps = range(5, 25)
    gains = [-np.diff(policy.evaluate(m, x)[:, 0])[0] / 0.5 for m in steps]
    reg = regularized_riccati_value(spec, 2.0).gain(grid.nodes[list(steps)])
    assert np.mean(gains) == pytest.approx(np.mean(reg), rel=0.15)
    assert descent_check(reports)


@pytest.mark.slow
def test_shipped_lq_reaches_regularized_fixed_point():
    spec = LQSpec()
    problem = spec.to_problem()
    grid = TimeGrid(1.0, 50)
    cfg = SolveConfig(epsilon=5.0, iterations=15, n_paths=20_000, grid=grid, degree=1, master_seed=20240501)
    policy, reports = solve(problem, cfg)
    y = policy_costs(problem, policy, 50_000, grid, seed=1)
    fixed = linear_feedback_cost(spec, regularized_riccati_value(spec, 5.0).gain(grid.nodes[:-1]), grid)
    assert abs(y.mean() - fixed) / fixed < 0.02
    # the regularized value is what cost_QP estimates at the fixed point
    reg_value = regularized_riccati_value(spec, 5.0).value(0.0, 1.0)
    assert abs(reports[-1].cost_QP - reg_value) < 0.03
    v = riccati_value(spec).value(0.0, 1.0)
    assert epsilon_gap_bound(y.mean(), v, y.var(ddof=1), 5.0, mc_slack=3 * y.std(ddof=1) / np.sqrt(y.size))


def test_zero_cost_problem_has_zero_twist_value():
    from entropic_control.config import CUSTOM_PROBLEMS

    problem = CUSTOM_PROBLEMS["zero-cost"]({"dim": 2})
    cfg = SolveConfig(epsilon=3.0, iterations=3, n_paths=200, grid=TimeGrid(1.0, 5), degree=1)
    _, reports = solve(problem, cfg)
    for r in reports:
        assert r.cost_QP == 0.0
        assert r.ess == pytest.approx(200)


def test_descent_check_semantics():
    assert descent_check([_report(1, 1.0), _report(2, 1.0), _report(3, 1.0)], slack=0.0)
    assert not descent_check([_report(1, 1.0), _report(2, 1.1), _report(3, 1.2)], slack=0.0)
    assert descent_check([_report(1, 1.0), _report(2, 0.9), _report(3, 0.9)])
    # a rise of 0.03 is inside 3 * sqrt(2) * 0.01
    assert descent_check([_report(1, 1.0), _report(2, 1.03)])
    assert not descent_check([_report(1, 1.0), _report(2, 1.1)])
    assert not descent_check([_report(1, 1.0), _report(2, 1.03)], slack=0.0)
    with pytest.raises(ValueError):
        descent_check([_report(1, 1.0)])


def test_epsilon_gap_bound():
    assert epsilon_gap_bound(1.0, 1.0, 0.0, 5.0)
    # optimal cost overstated by ten times the gap puts the gap below zero
    assert not epsilon_gap_bound(1.1, 1.0 + 10 * 0.1, 1.0, 0.5)
    assert epsilon_gap_bound(1.1, 1.0, 1.0, 0.5)
    assert not epsilon_gap_bound(1.3, 1.0, 1.0, 0.5)
    assert epsilon_gap_bound(1.3, 1.0, 1.0, 0.5, eps_prime=0.1)
    assert not epsilon_gap_bound(0.9, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        epsilon_gap_bound(1.0, 1.0, -1.0, 1.0)


def test_reports_csv(tmp_path):
    reports = [_report(1, 1.0), _report(2, 0.9)]
    write_reports_csv(reports, tmp_path / "r.csv", comments=["x"])
    cols, rows = read_table(tmp_path / "r.csv")
    assert cols == ["k", "cost_QP", "cost_PP", "ess", "min_weight", "max_weight", "cost_QP_se", "cost_PP_se"]
    assert rows[1][0] == "2" and float(rows[1][1]) == 0.9
    write_reports_csv(reports, tmp_path / "t.csv", timing=True)
    assert read_table(tmp_path / "t.csv")[0][-1] == "seconds"
    write_reports_csv([], tmp_path / "e.csv")
    assert read_table(tmp_path / "e.csv")[1] == []
