"""Nearest-neighbour lattice paths: passage times, the largest Gibbs atom,
turns and turn flips, and the exact turn-count combinatorics.

Site environments are arrays ``omega[i - 1, x]`` over times ``1..n`` and the
cube ``|x|_inf <= n`` (C-ordered coordinates, origin at index ``n``), the same
layout the polymer model uses for the simple random walk.  The reference
measure is uniform over the ``(2d)^n`` paths, so it cancels from every atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import rng as rng_streams
from .core import Environment
from .exact import _shift
from .models import WalkKernel


class EnvCoverageError(ValueError):
    """The environment does not cover every site reachable in ``n`` steps."""


def unit_steps(d: int) -> list[tuple[int, ...]]:
    """Unit steps in lexicographic tie-break order: +e1, -e1, +e2, -e2, ..."""
    return list(WalkKernel.simple(d).steps)


@dataclass(frozen=True)
class LatticePath:
    d: int
    steps: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        steps = tuple(tuple(int(c) for c in s) for s in self.steps)
        for s in steps:
            if len(s) != self.d or sum(abs(c) for c in s) != 1:
                raise ValueError(f"{s} is not a unit step in dimension {self.d}")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def from_indices(cls, d: int, idx: Sequence[int]) -> "LatticePath":
        table = unit_steps(d)
        return cls(d, tuple(table[int(i)] for i in idx))

    @property
    def n(self) -> int:
        return len(self.steps)

    @cached_property
    def positions(self) -> np.ndarray:
        """``x_0 = 0, x_1, ..., x_n`` as an ``(n + 1, d)`` array."""
        out = np.zeros((self.n + 1, self.d), dtype=np.int64)
        if self.n:
            out[1:] = np.cumsum(np.asarray(self.steps), axis=0)
        return out

    @property
    def indices(self) -> tuple[int, ...]:
        table = unit_steps(self.d)
        return tuple(table.index(s) for s in self.steps)

    @cached_property
    def turns(self) -> tuple[int, ...]:
        """``T(x) = {1 <= i <= n-1 : x_{i+1} - x_i != x_i - x_{i-1}}``."""
        return tuple(i for i in range(1, self.n) if self.steps[i] != self.steps[i - 1])

    @property
    def turn_count(self) -> int:
        return len(self.turns)


def flip_at_turn(path: LatticePath, i: int) -> LatticePath:
    """Swap steps ``i`` and ``i + 1``; only ``x_i`` moves."""
    if i not in path.turns:
        raise ValueError(f"{i} is not a turn of the path (turns: {path.turns})")
    steps = list(path.steps)
    steps[i - 1], steps[i] = steps[i], steps[i - 1]
    return LatticePath(path.d, tuple(steps))


def count_paths_by_turns(n: int, d: int) -> list[int]:
    """Number of paths with exactly ``j`` turns, ``2d C(n-1, j) (2d-1)^j``, for ``j = 0..n-1``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [2 * d * math.comb(n - 1, j) * (2 * d - 1) ** j for j in range(n)]


def site_grid(d: int, n: int, env) -> np.ndarray:
    """Coerce ``env`` (flat vector, :class:`Environment` or grid) to shape ``(n, side, ...)``."""
    side = 2 * n + 1
    shape = (n,) + (side,) * d
    g = env.g if isinstance(env, Environment) else np.asarray(env, dtype=float)
    if g.size != int(np.prod(shape)):
        raise EnvCoverageError(
            f"environment has {g.size} entries; need {n} times x {side}^{d} sites (|x|_inf <= {n})"
        )
    g = g.reshape(shape)
    if not np.all(np.isfinite(g)):
        raise ValueError("environment entries must be finite")
    return g


def _site_value(grid, i, pos):
    """``omega(i, pos)`` for 1-based time ``i``."""
    n = grid.shape[0]
    return float(grid[(i - 1,) + tuple(int(c) + n for c in pos)])


def path_energy(grid: np.ndarray, path: LatticePath) -> float:
    return sum(_site_value(grid, i, path.positions[i]) for i in range(1, path.n + 1))


def passage_time(d: int, n: int, env) -> tuple[float, LatticePath]:
    """``L_n = max_x H_n(x)`` and the lexicographically first maximizing path."""
    grid = site_grid(d, n, env)
    steps = unit_steps(d)
    # value[i][x] = best energy collected over times i+1..n starting from x at time i
    value = np.empty((n + 1,) + grid.shape[1:])
    value[n] = 0.0
    for i in range(n, 0, -1):
        nxt = grid[i - 1] + value[i]
        value[i - 1] = np.max([_shift(nxt, tuple(-c for c in s), -np.inf) for s in steps], axis=0)
    origin = (n,) * d
    pos = list(origin)
    chosen = []
    for i in range(1, n + 1):
        best = value[i - 1][tuple(pos)]
        for s in steps:
            cand = tuple(p + c for p, c in zip(pos, s))
            if grid[i - 1][cand] + value[i][cand] == best:
                chosen.append(s)
                pos = list(cand)
                break
        else:
            raise AssertionError("backtracking failed to match the DP value")
    return float(value[0][origin]), LatticePath(d, tuple(chosen))


def log_partition_paths(d: int, n: int, env, beta: float) -> float:
    """``log sum_x e^{beta H(x)}`` over all ``(2d)^n`` paths (unnormalised)."""
    grid = site_grid(d, n, env)
    steps = unit_steps(d)
    fwd = np.full(grid.shape[1:], -np.inf)
    fwd[(n,) * d] = 0.0
    for i in range(1, n + 1):
        fwd = logsumexp(np.stack([_shift(fwd, s, -np.inf) for s in steps]), axis=0) + beta * grid[i - 1]
    return float(logsumexp(fwd))


@dataclass(frozen=True)
class AtomReport:
    n: int
    beta: float
    passage_time: float
    max_atom: float
    argmax: LatticePath
    log_max_atom: float

    @property
    def n_times_atom(self) -> float:
        return self.n * self.max_atom


def max_atom(d: int, n: int, env, beta: float) -> AtomReport:
    """Largest Gibbs atom ``exp(beta L_n - log sum_x e^{beta H(x)})``."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    grid = site_grid(d, n, env)
    ln, path = passage_time(d, n, grid)
    log_atom = beta * ln - log_partition_paths(d, n, grid, beta)
    log_atom = min(log_atom, 0.0)
    return AtomReport(n, float(beta), ln, math.exp(log_atom), path, log_atom)


def turn_flip_bound(d: int, n: int, env, beta: float, path: LatticePath) -> float:
    """``e^{beta H(y)} / sum_{i in T(y)} e^{beta H(y^{(i)})}`` for a path ``y``."""
    grid = site_grid(d, n, env)
    if not path.turns:
        return math.inf
    gains = [_flip_gain(grid, path, i) for i in path.turns]
    return float(math.exp(-logsumexp(beta * np.asarray(gains))))


def _flip_gain(grid, path, i):
    """``H(x^{(i)}) - H(x) = omega(i, x^{(i)}_i) - omega(i, x_i)``."""
    flipped = flip_at_turn(path, i)
    return _site_value(grid, i, flipped.positions[i]) - _site_value(grid, i, path.positions[i])


def gap_census(omega: Sequence[float], omega_prime: Sequence[float], D: float) -> int:
    """``|{i : omega_i > omega'_i + D}|``."""
    a = np.asarray(omega, dtype=float)
    b = np.asarray(omega_prime, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired sequences must have equal length")
    return int(np.count_nonzero(a > b + D))


def turn_site_pairs(d: int, n: int, env, path: LatticePath) -> tuple[np.ndarray, np.ndarray]:
    """``(omega(i, x_i), omega(i, x^{(i)}_i))`` for every turn ``i`` of ``path``."""
    grid = site_grid(d, n, env)
    own = [_site_value(grid, i, path.positions[i]) for i in path.turns]
    alt = [_site_value(grid, i, flip_at_turn(path, i).positions[i]) for i in path.turns]
    return np.asarray(own), np.asarray(alt)


def near_degenerate_turns(d: int, n: int, env, path: LatticePath, D: float) -> int:
    """``|{i in T(x) : H(x) <= H(x^{(i)}) + D}|``."""
    own, alt = turn_site_pairs(d, n, env, path)
    return len(own) - gap_census(own, alt, D)


ENV_DISTRIBUTIONS = {
    "gaussian": "standard normal",
    "bounded-uniform": "uniform on [-sqrt 3, sqrt 3]",
    "exponential-tilt-valid": "Exp(1) - 1",
}
_ALIASES = {"normal": "gaussian", "uniform": "bounded-uniform", "exponential": "exponential-tilt-valid"}


def check_env_dist(name: str) -> str:
    """Canonical family name; families without an exponential moment are rejected."""
    key = _ALIASES.get(name, name)
    if key not in ENV_DISTRIBUTIONS:
        raise ValueError(
            f"unsupported env_dist {name!r}; choose one of {sorted(ENV_DISTRIBUTIONS)} "
            "(site weights need E exp(t omega) < infinity for some t > 0 and positive variance)"
        )
    return key


def sample_site_grid(d: int, n: int, dist: str, seed: int, replica_id: int = 0) -> np.ndarray:
    """Unit-variance i.i.d. site weights from one of the supported families."""
    key = check_env_dist(dist)
    gen = rng_streams.stream(seed, replica_id, rng_streams.ATOM_ENV)
    shape = (n,) + (2 * n + 1,) * d
    if key == "gaussian":
        return gen.standard_normal(shape)
    if key == "bounded-uniform":
        s = math.sqrt(3.0)
        return gen.uniform(-s, s, shape)
    return gen.exponential(1.0, shape) - 1.0


@dataclass(frozen=True)
class AtomScanRow:
    n: int
    beta: float
    replicas: int
    median_atom: float
    q1_atom: float
    q3_atom: float
    median_n_atom: float
    q1_n_atom: float
    q3_n_atom: float
    mean_passage_per_n: float
    lambda_estimate: float


@dataclass(frozen=True)
class AtomScan:
    rows: list
    records: list
    env_dist: str

    @property
    def exceeds_mean_weight(self) -> bool:
        """Whether ``E L_n / n`` exceeds ``E omega = 0`` at the largest ``n``."""
        return self.rows[-1].mean_passage_per_n > 0.0


def atom_decay_scan(d: int, beta: float, n_list: Sequence[int], replicas: int, env_dist: str, seed: int) -> AtomScan:
    """Quartiles of ``max_atom`` and ``n * max_atom`` over disorder replicas, per ``n``.

    ``lambda_estimate`` is the running maximum of ``E L_n / n`` over the grid.
    """
    key = check_env_dist(env_dist)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    rows, records = [], []
    lam = -math.inf
    for n in sorted(n_list):
        atoms = np.empty(replicas)
        passage = np.empty(replicas)
        for r in range(replicas):
            grid = sample_site_grid(d, n, key, seed + 7919 * n, r)
            rep = max_atom(d, n, grid, beta)
            atoms[r] = rep.max_atom
            passage[r] = rep.passage_time
            records.append(
                {
                    "n": n,
                    "beta": beta,
                    "replica": r,
                    "L_n": rep.passage_time,
                    "max_atom": rep.max_atom,
                    "n_times_atom": rep.n_times_atom,
                    "turns_of_argmax": rep.argmax.turn_count,
                }
            )
        q1, med, q3 = np.quantile(atoms, [0.25, 0.5, 0.75])
        lam = max(lam, float(passage.mean() / n))
        rows.append(AtomScanRow(n, beta, replicas, float(med), float(q1), float(q3), float(n * med), float(n * q1), float(n * q3), float(passage.mean() / n), lam))
    return AtomScan(rows, records, key)
