"""Command-line front end.

Usage: ``entropic-control <command> <config.toml> [--seed N] [--out DIR] [--threads N]``.
Exit status is 0 on success, 1 when a validation or certification check
fails, 2 on any other error; failures print one ``error: <kind>: ...`` line
on stderr.
"""

import argparse
import os
import sys
import warnings

import numpy as np

from . import __version__
from .algorithm import descent_check, epsilon_gap_bound, solve, write_reports_csv
from .config import ConfigError, build_problem, config_hash, load_config, lq_spec, solve_config
from .csvio import write_table
from .errors import EntropicControlError, ValidationError
from .evaluation import evaluate_policy, evaluation_campaign, policy_costs
from .lq_oracle import hjb_grid_value, linear_feedback_cost, regularized_riccati_value, riccati_value
from .model import TimeGrid, default_probe_points, validate_problem
from .policy_min import DriftPolicy, write_policy_csv
from .simulate import NAMESPACE_EVAL, simulate_paths
from .tcl_bench import to_physical

OUT_ENV = "ENTROPIC_CONTROL_OUT"
COMMANDS = ("validate", "solve", "evaluate", "oracle", "bench-tcl")


class CheckFailed(Exception):
    pass


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (u64), overrides the config")
    common.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads; never changes results")
    common.add_argument("--format", choices=["csv"], default=argparse.SUPPRESS)
    common.add_argument("--timing", action="store_true", default=argparse.SUPPRESS, help="add wall-clock columns")

    parser = argparse.ArgumentParser(prog="entropic-control", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("config")
    return parser


class _Run:
    """Effective settings plus the output helpers shared by all commands."""

    def __init__(self, args):
        self.cfg = load_config(args.config)
        self.seed = int(getattr(args, "seed", self.cfg["seed"]))
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be in [0, 2^64), got {self.seed}")
        self.cfg["seed"] = self.seed
        self.threads = int(getattr(args, "threads", 1))
        if self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        self.timing = bool(getattr(args, "timing", False))
        self.out = getattr(args, "out", None) or os.environ.get(OUT_ENV) or "out"
        os.makedirs(self.out, exist_ok=True)
        self.hash = config_hash(self.cfg)

    @property
    def header(self):
        return [f"entropic-control {__version__} config_sha256={self.hash} seed={self.seed}"]

    def path(self, name):
        return os.path.join(self.out, name)

    def problem(self):
        return build_problem(self.cfg)

    def solve_config(self, problem):
        return solve_config(self.cfg, problem, self.seed, self.threads)


def _probe_states(problem, n=64):
    rng = np.random.default_rng(0)
    return problem.start + rng.standard_normal((n, problem.dim))


def _write_solve_outputs(run, problem, result, transform=None):
    policy, reports = result
    write_policy_csv(policy, run.path("policy.csv"), _probe_states(problem), run.header, transform)
    write_reports_csv(reports, run.path("reports.csv"), run.header, timing=run.timing)
    if isinstance(policy, DriftPolicy):
        policy.drift.write_diagnostics_csv(run.path("regression.csv"), run.header)


# -- commands -------------------------------------------------------------


def cmd_validate(run):
    problem = run.problem()
    report = validate_problem(problem, default_probe_points(problem))
    rows = [[name, int(ok)] for name, ok in report.checks.items()]
    write_table(run.path("validation.csv"), ["check", "passed"], rows, run.header)
    for name, ok in report.checks.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    if not report.passed:
        failed = [k for k, v in report.checks.items() if not v]
        raise CheckFailed(f"validation: failed checks {','.join(failed)}")


def cmd_solve(run):
    problem = run.problem()
    result = solve(problem, run.solve_config(problem))
    transform = (lambda v: to_physical(problem, v)) if problem.name == "tcl" else None
    _write_solve_outputs(run, problem, result, transform)
    if result.reports:
        last = result.reports[-1]
        print(f"iterations: {len(result.reports)} cost_QP: {last.cost_QP:.6g} cost_PP: {last.cost_PP:.6g}")
    else:
        print("iterations: 0")


def cmd_evaluate(run):
    problem = run.problem()
    sec = run.cfg["evaluate"]
    report = evaluation_campaign(
        problem, run.solve_config(problem), int(sec["n_grid"]), int(sec["n_simu"]), run.seed, run.threads
    )
    report.write_csv(run.path("campaign.csv"), run.header)
    print(f"grand_mean: {report.grand_mean:.6g} between_run_std: {report.between_run_std:.3g} cell: {report.table_cell()}")


def cmd_oracle(run):
    if run.cfg["problem"]["kind"] != "lq":
        raise ConfigError("oracle needs problem.kind = 'lq'")
    spec = lq_spec(run.cfg)
    problem = spec.to_problem()
    sec = run.cfg["oracle"]
    ric = riccati_value(spec)
    v_star = float(ric.value(0.0, spec.start))

    hjb_grid = TimeGrid(spec.horizon, int(sec["time_steps"]))
    table = hjb_grid_value(
        problem,
        hjb_grid,
        float(sec["x_min"]),
        float(sec["x_max"]),
        n_space=int(sec["n_space"]),
        u_points=int(sec["u_points"]),
        refine_levels=int(sec["refine_levels"]),
        gh_nodes=int(sec["gh_nodes"]),
    )
    table.write_csv(run.path("hjb_value.csv"), run.header)
    v_hjb = float(table.value(0, np.array([spec.start]))[0])
    cross = abs(v_hjb - v_star) / abs(v_star)

    cfg = run.solve_config(problem)
    policy, reports = solve(problem, cfg)
    _write_solve_outputs(run, problem, (policy, reports))
    y = policy_costs(problem, policy, int(sec["n_simu"]), cfg.grid, run.seed, run.threads)
    j_hat = float(np.mean(y))
    se = float(np.std(y, ddof=1) / np.sqrt(y.size))
    var = float(np.var(y, ddof=1))
    rel = (j_hat - v_star) / v_star
    bound_ok = epsilon_gap_bound(j_hat, v_star, var, cfg.epsilon, mc_slack=3 * se)

    reg = regularized_riccati_value(spec, cfg.epsilon)
    fixed_point = linear_feedback_cost(spec, reg.gain(cfg.grid.nodes[:-1]), cfg.grid)
    nodes = ric.times
    write_table(
        run.path("riccati.csv"),
        ["t", "P", "c", "gain"],
        [[float(t), float(p), float(c), float(p / spec.control_weight)] for t, p, c in zip(nodes, ric.p, ric.c)][::100]
        + [[float(nodes[-1]), float(ric.p[-1]), float(ric.c[-1]), float(ric.p[-1] / spec.control_weight)]],
        run.header,
    )

    tol, cross_tol = float(sec["tolerance"]), float(sec["cross_tolerance"])
    checks = [
        ("cross_agreement", abs(v_hjb - v_star), cross, cross <= cross_tol),
        ("relative_gap", j_hat - v_star, rel, abs(rel) <= tol),
        ("gap_bound", j_hat - v_star, 0.5 * cfg.epsilon * var + 3 * se, bound_ok),
    ]
    summary = [
        ["riccati_value", v_star, "", ""],
        ["hjb_value", v_hjb, "", ""],
        ["policy_cost", j_hat, se, ""],
        ["regularized_fixed_point_cost", fixed_point, "", ""],
    ] + [[name, a, b, int(ok)] for name, a, b, ok in checks]
    write_table(run.path("oracle.csv"), ["quantity", "value", "reference", "passed"], summary, run.header)

    print(f"riccati V(0,x0): {v_star:.6f}")
    print(f"hjb V(0,x0): {v_hjb:.6f} rel_diff: {cross:.2e} cross-agreement: {'PASS' if cross <= cross_tol else 'FAIL'}")
    print(f"policy cost: {j_hat:.6f} +- {se:.1e} rel_gap: {rel:+.4f} (tolerance {tol:g})")
    print(f"regularized fixed-point cost at eps={cfg.epsilon:g}: {fixed_point:.6f}")
    print(f"gap bound: {'PASS' if bound_ok else 'FAIL'}")
    ok = all(c[3] for c in checks)
    print(f"certification: {'PASS' if ok else 'FAIL'}")
    if not ok:
        failed = [c[0] for c in checks if not c[3]]
        raise CheckFailed(f"certification: failed checks {','.join(failed)}")


def cmd_bench_tcl(run):
    if run.cfg["problem"]["kind"] != "tcl":
        raise ConfigError("bench-tcl needs problem.kind = 'tcl'")
    problem = run.problem()
    cfg = run.solve_config(problem)
    result = solve(problem, cfg)
    _write_solve_outputs(run, problem, result, lambda v: to_physical(problem, v))

    n_simu = int(run.cfg["evaluate"]["n_simu"])
    ev = evaluate_policy(problem, result.policy, n_simu, cfg.grid, run.seed, run.threads)
    batch = simulate_paths(problem, result.policy, n_simu, cfg.grid, run.seed, (NAMESPACE_EVAL,), run.threads)
    params = problem.metadata["params"]
    profile = problem.metadata["profile"]
    d = problem.dim
    u_mean = to_physical(problem, batch.controls).mean(axis=0)
    x_mean = batch.states.mean(axis=0)
    rows = []
    for m, t in enumerate(cfg.grid.nodes[:-1]):
        rows.append(
            [m, float(t), float(profile(t))] + u_mean[m].tolist() + [float(u_mean[m] @ params.rho)] + x_mean[m].tolist()
        )
    columns = ["step", "t", "r"] + [f"u_{i + 1}" for i in range(d)] + ["consumption"] + [f"x_{i + 1}" for i in range(d)]
    write_table(run.path("tcl_trajectory.csv"), columns, rows, run.header)

    descent = descent_check(result.reports)
    print(f"policy cost: {ev.mean_cost:.6g} +- {ev.std_error:.1e}")
    print(f"descent: {'PASS' if descent else 'FAIL'}")
    if not descent:
        raise CheckFailed("descent: cost_QP increased beyond 3 pooled standard errors")


HANDLERS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "bench-tcl": cmd_bench_tcl,
}


def _one_line(msg):
    return " ".join(str(msg).split())


def run_cli(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            run = _Run(args)
            HANDLERS[args.command](run)
    except ConfigError as exc:
        print(f"error: config: {_one_line(exc)}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: validation: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except EntropicControlError as exc:
        print(f"error: runtime: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: runtime: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
