"""Euler-Maruyama simulation of the controlled SDE under a Markov policy.

Every path owns a Philox stream keyed by ``(master_seed, *stream, path)``,
so the noise of path n does not depend on N, on chunking, or on the number
of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .csvio import write_table
from .errors import NonFiniteState
from .model import ControlProblem, MarkovPolicy, TimeGrid

# Stream namespaces keep training noise disjoint from evaluation noise.
NAMESPACE_TRAIN = 0
NAMESPACE_EVAL = 1
NAMESPACE_CAMPAIGN = 2

_MAX_SEED = 2**64


def path_generator(master_seed: int, stream: Tuple[int, ...], path: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(*stream, int(path)))
    return np.random.Generator(np.random.Philox(seq))


def gaussian_increments(master_seed, stream, n_paths, num_steps, dim, threads=1) -> np.ndarray:
    """Standard normal draws of shape ``(n_paths, num_steps, dim)``."""
    if not 0 <= int(master_seed) < _MAX_SEED:
        raise ValueError("master_seed must be an unsigned 64-bit integer")
    out = np.empty((n_paths, num_steps, dim))

    def fill(lo, hi):
        for n in range(lo, hi):
            out[n] = path_generator(master_seed, stream, n).standard_normal((num_steps, dim))

    threads = max(1, int(threads))
    if threads == 1 or n_paths < 2 * threads:
        fill(0, n_paths)
    else:
        edges = np.linspace(0, n_paths, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, edges[:-1], edges[1:]))
    return out


@dataclass(frozen=True, eq=False)
class PathBatch:
    grid: TimeGrid
    states: np.ndarray  # (N, M+1, d)
    controls: np.ndarray  # (N, M, d)
    master_seed: int
    stream: Tuple[int, ...]
    path_ids: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def write_csv(self, path, comments=()):
        n, m1, d = self.states.shape
        nodes = self.grid.nodes
        columns = ["path_id", "step", "t"] + [f"x_{i + 1}" for i in range(d)] + [f"u_{i + 1}" for i in range(d)]
        rows = []
        empty = [""] * d
        for p in range(n):
            for m in range(m1):
                u = self.controls[p, m].tolist() if m < m1 - 1 else empty
                rows.append([int(self.path_ids[p]), m, float(nodes[m])] + self.states[p, m].tolist() + u)
        return write_table(path, columns, rows, comments)


def simulate_paths(
    problem: ControlProblem,
    policy: MarkovPolicy,
    n_paths: int,
    grid: TimeGrid,
    master_seed: int,
    stream: Tuple[int, ...] = (NAMESPACE_TRAIN,),
    threads: int = 1,
) -> PathBatch:
    """Simulate ``n_paths`` Euler-Maruyama paths with the control frozen at
    the left node of each step."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if policy.grid != grid:
        raise ValueError("policy grid differs from simulation grid")
    d = problem.dim
    M = grid.num_steps
    dt = grid.step
    sqdt = np.sqrt(dt)
    nodes = grid.nodes
    z = gaussian_increments(master_seed, tuple(stream), n_paths, M, d, threads)

    states = np.empty((n_paths, M + 1, d))
    controls = np.empty((n_paths, M, d))
    states[:, 0] = problem.start
    for m in range(M):
        t = float(nodes[m])
        x = states[:, m]
        u = policy.evaluate(m, x)
        controls[:, m] = u
        nxt = x + (problem.drift_at(t, x) + u) * dt + problem.diffuse(t, x, z[:, m]) * sqdt
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteState(f"non-finite state at step {m + 1} (t={nodes[m + 1]:.6g})")
        states[:, m + 1] = nxt
    return PathBatch(
        grid=grid,
        states=states,
        controls=controls,
        master_seed=int(master_seed),
        stream=tuple(stream),
        path_ids=np.arange(n_paths),
    )


def path_costs(batch: PathBatch, problem: ControlProblem) -> np.ndarray:
    """Per-path Y = sum_m f(t_m, X_m, u_m) dt + g(X_M)."""
    nodes = batch.grid.nodes
    dt = batch.grid.step
    total = np.zeros(batch.n_paths)
    for m in range(batch.grid.num_steps):
        total += problem.running(float(nodes[m]), batch.states[:, m], batch.controls[:, m]) * dt
    return total + problem.terminal(batch.states[:, -1])
