"""TOML run configuration: defaults, loading, and problem construction.

See ``docs/config_schema.md`` for every field.
"""

import copy
import hashlib
import json
import os

import numpy as np

from .algorithm import SolveConfig
from .errors import CoverageError, EntropicControlError, ParseError
from .lq_oracle import LQSpec
from .model import Box, ConstantPolicy, ControlProblem, QuadraticControl, TimeGrid, zero_policy
from .tcl_bench import TargetProfile, build_tcl_problem, default_params, from_physical, hold_policy, load_profile

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(EntropicControlError):
    pass


DEFAULTS = {
    "seed": 0,
    "problem": {"kind": "lq", "name": ""},
    "lq": {
        "q": 0.0,
        "control_weight": 1.0,
        "terminal_weight": 1.0,
        "sigma": 1.0,
        "horizon": 1.0,
        "start": 1.0,
        "bound": 10.0,
    },
    "tcl": {
        "dim": 2,
        "horizon": 2.0,
        "target_level": 0.5,
        "profile": "",
        "initial": "hold",
    },
    "custom": {},
    "solve": {
        "epsilon": 5.0,
        "iterations": 15,
        "n_paths": 20000,
        "num_steps": 50,
        "degree": 1,
        "ess_floor": 2.0,
        "ridge": 1e-10,
        "tol": 1e-10,
        "max_iters": 500,
    },
    "evaluate": {"n_grid": 5, "n_simu": 1000},
    "oracle": {
        "n_space": 400,
        "time_steps": 200,
        "u_points": 41,
        "refine_levels": 2,
        "gh_nodes": 15,
        "x_min": -8.0,
        "x_max": 10.0,
        "n_simu": 100000,
        "tolerance": 0.02,
        "cross_tolerance": 0.01,
    },
}

TCL_OVERRIDES = ("theta", "x_out", "kappa", "p_max", "sigma", "x0", "x_min", "x_max", "x_target", "n_devices", "mu", "gamma", "eta")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            if path.startswith("tcl.") and key in TCL_OVERRIDES or path.startswith("custom."):
                out[key] = value
                continue
            raise ConfigError(f"unknown field '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a section")
            out[key] = _merge(base[key], value, where + ".")
        else:
            if isinstance(base[key], (int, float)) and not isinstance(base[key], bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"'{where}' must be a number, got {value!r}")
                if isinstance(base[key], int) and not isinstance(value, int) and key != "seed":
                    if float(value) != int(value):
                        raise ConfigError(f"'{where}' must be an integer, got {value!r}")
                    value = int(value)
            out[key] = value
    return out


def load_config(path):
    """Parse ``path`` and merge it over :data:`DEFAULTS`."""
    if not os.path.isfile(path):
        raise ConfigError(f"file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = _merge(DEFAULTS, raw)
    cfg["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def config_hash(cfg) -> str:
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(public, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def lq_spec(cfg) -> LQSpec:
    try:
        return LQSpec(**cfg["lq"])
    except ValueError as exc:
        raise ConfigError(f"lq: {exc}") from None


def tcl_problem(cfg) -> ControlProblem:
    sec = cfg["tcl"]
    dim = int(sec["dim"])
    overrides = {k: sec[k] for k in TCL_OVERRIDES if k in sec}
    params = default_params(dim, **overrides)
    if sec["profile"]:
        path = os.path.join(cfg["_base_dir"], sec["profile"])
        if not os.path.isfile(path):
            raise ConfigError(f"tcl.profile not found: {path}")
        try:
            profile = load_profile(path, sec["horizon"])
        except (ParseError, CoverageError) as exc:
            raise ConfigError(f"tcl.profile {path}: {exc}") from None
    else:
        profile = TargetProfile.constant(sec["target_level"], sec["horizon"])
    return build_tcl_problem(params, profile, sec["horizon"])


# -- named custom problems ----------------------------------------------------


def _zero_cost(sec):
    d = int(sec.get("dim", 1))
    sigma = float(sec.get("sigma", 1.0))
    return ControlProblem(
        dim=d,
        horizon=float(sec.get("horizon", 1.0)),
        start=np.full(d, float(sec.get("start", 0.0))),
        drift=lambda t, x: np.zeros_like(x),
        diffusion=lambda t, x: sigma * np.eye(d),
        control_box=Box(np.full(d, -1.0), np.full(d, 1.0)),
        running_cost=lambda t, x, u: np.zeros(x.shape[0]),
        terminal_cost=lambda x: np.zeros(x.shape[0]),
        quadratic=QuadraticControl(lambda t: np.zeros((d, d)), lambda t, x: np.zeros_like(x)),
        diagonal_diffusion=True,
        name="zero-cost",
    )


def _quadratic_tracking(sec):
    d = int(sec.get("dim", 2))
    sigma = float(sec.get("sigma", 0.5))
    a = float(sec.get("control_weight", 1.0))
    q = float(sec.get("state_weight", 1.0))
    m = float(sec.get("terminal_weight", 1.0))
    target = np.full(d, float(sec.get("target", 0.0)))
    bound = float(sec.get("bound", 2.0))
    return ControlProblem(
        dim=d,
        horizon=float(sec.get("horizon", 1.0)),
        start=np.full(d, float(sec.get("start", 1.0))),
        drift=lambda t, x: np.zeros_like(x),
        diffusion=lambda t, x: sigma * np.eye(d),
        control_box=Box(np.full(d, -bound), np.full(d, bound)),
        running_cost=lambda t, x, u: a * np.sum(u**2, axis=1) + q * np.sum((x - target) ** 2, axis=1),
        terminal_cost=lambda x: m * np.sum((x - target) ** 2, axis=1),
        quadratic=QuadraticControl(lambda t: 2 * a * np.eye(d), lambda t, x: np.zeros_like(x)),
        diagonal_diffusion=True,
        name="quadratic-tracking",
    )


CUSTOM_PROBLEMS = {"zero-cost": _zero_cost, "quadratic-tracking": _quadratic_tracking}


def build_problem(cfg) -> ControlProblem:
    kind = cfg["problem"]["kind"]
    if kind == "lq":
        return lq_spec(cfg).to_problem()
    if kind == "tcl":
        return tcl_problem(cfg)
    if kind == "custom":
        name = cfg["problem"]["name"]
        if name not in CUSTOM_PROBLEMS:
            raise ConfigError(f"problem.name must be one of {sorted(CUSTOM_PROBLEMS)}, got {name!r}")
        return CUSTOM_PROBLEMS[name](cfg["custom"])
    raise ConfigError(f"problem.kind must be 'lq', 'tcl' or 'custom', got {kind!r}")


def initial_policy(cfg, problem: ControlProblem, grid: TimeGrid):
    if problem.name != "tcl":
        return zero_policy(problem, grid)
    init = cfg["tcl"]["initial"]
    if init == "hold":
        return hold_policy(problem, grid)
    if init == "zero":
        return zero_policy(problem, grid)
    if isinstance(init, (int, float)) and not isinstance(init, bool) and 0 <= init <= 1:
        u = np.full(problem.dim, float(init))
        return ConstantPolicy(grid, problem.control_box, from_physical(problem, u))
    raise ConfigError(f"tcl.initial must be 'hold', 'zero' or a number in [0, 1], got {init!r}")


def solve_config(cfg, problem: ControlProblem, seed: int, threads: int = 1) -> SolveConfig:
    sec = cfg["solve"]
    try:
        grid = TimeGrid(problem.horizon, int(sec["num_steps"]))
        return SolveConfig(
            epsilon=float(sec["epsilon"]),
            iterations=int(sec["iterations"]),
            n_paths=int(sec["n_paths"]),
            grid=grid,
            degree=int(sec["degree"]),
            master_seed=int(seed),
            initial_policy=initial_policy(cfg, problem, grid),
            ess_floor=float(sec["ess_floor"]),
            ridge=float(sec["ridge"]),
            tol=float(sec["tol"]),
            max_iters=int(sec["max_iters"]),
            threads=int(threads),
        )
    except ValueError as exc:
        raise ConfigError(f"solve: {exc}") from None
