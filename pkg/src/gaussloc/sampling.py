"""Samplers for Gibbs replicas and the pairwise-overlap U-statistic.

REM and polymers are sampled exactly (inverse CDF over enumerated weights;
sequential sampling along the backward transfer tables).  p-spin instances use
exact enumeration when asked for, otherwise a plain single-spin-flip
Metropolis chain whose output is flagged as approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import rng as rng_streams
from .core import ModelKind, ModelSpec, StateId, validate_state
from .exact import DEFAULT_BUDGET, ExactGibbs
from .models import paths_sites, tensor_energies


@dataclass(frozen=True)
class McmcConfig:
    sweeps_per_sample: int = 1
    burn_in: int = 1000
    chains: int = 4

    def __post_init__(self):
        if self.sweeps_per_sample < 1:
            raise ValueError("sweeps_per_sample must be >= 1")
        if self.burn_in < 0 or self.chains < 1:
            raise ValueError("burn_in must be >= 0 and chains >= 1")


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    num_samples: int
    mcmc: McmcConfig | None = None
    replica_id: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")


@dataclass
class SampleBatch(Sequence):
    """Sampled states plus how they were produced.

    ``array`` holds the same states as integers (spin bitmasks) or an
    ``(m, n)`` step-index array (paths).
    """

    model: ModelSpec
    array: np.ndarray
    exact: bool
    method: str
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.array)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._state(r) for r in self.array[i]]
        return self._state(self.array[i])

    def _state(self, row):
        if self.model.is_spin:
            return int(row)
        return tuple(int(s) for s in row)

    @property
    def states(self) -> list[StateId]:
        return [self._state(r) for r in self.array]

    def dump(self) -> str:
        """One canonical state string per line."""
        p = self.model.params
        return "".join(p.encode(self.model.n, s) + "\n" for s in self.states)


def sample_states(gibbs, cfg: SamplerConfig, method: str = "auto") -> SampleBatch:
    """Draw ``cfg.num_samples`` states from the Gibbs measure of ``gibbs``.

    ``gibbs`` is an :class:`ExactGibbs` or a ``(model, env, beta)`` triple.
    ``method`` is ``"auto"``, ``"exact"`` or ``"mcmc"``; MCMC is only offered
    for p-spin models.
    """
    if isinstance(gibbs, tuple):
        model, env, beta = gibbs
        if method == "mcmc" or (method == "auto" and model.kind is ModelKind.MIXED_PSPIN and model.n > DEFAULT_BUDGET.pspin_n_max):
            return metropolis(model, env, beta, cfg)
        gibbs = ExactGibbs(model, env, beta)
    model = gibbs.model
    if method == "mcmc":
        if model.kind is not ModelKind.MIXED_PSPIN:
            raise ValueError(f"MCMC refused for {model.kind.value}: an exact sampler exists")
        return metropolis(model, gibbs.env, gibbs.beta, cfg)
    if method not in ("auto", "exact"):
        raise ValueError(f"unknown sampling method {method!r}")
    gen = rng_streams.stream(cfg.seed, cfg.replica_id, rng_streams.SAMPLER)
    if model.is_spin:
        cdf = np.cumsum(gibbs.probs)
        u = gen.random(cfg.num_samples) * cdf[-1]
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
        return SampleBatch(model, idx.astype(np.int64), True, "inverse-cdf")
    return SampleBatch(model, _polymer_paths(gibbs, cfg.num_samples, gen), True, "backward-tables")


def _polymer_paths(gibbs: ExactGibbs, m: int, gen: np.random.Generator) -> np.ndarray:
    """Forward sampling of paths, step ``i`` drawn from ``K(s) * exp(beta g + b_i)``."""
    model = gibbs.model
    pp = model.params
    n = model.n
    bwd = gibbs.backward_table().reshape(n + 1, -1)
    G = gibbs.env.g.reshape(n, -1)
    logk = pp.kernel.log_probs
    offs = pp.step_offsets(n)
    size = bwd.shape[1]
    site = np.full(m, pp.origin_site(n), dtype=np.int64)
    out = np.empty((m, n), dtype=np.int64)
    for i in range(n):
        nxt = site[:, None] + offs[None, :]
        ok = _in_box(pp, n, site)
        nxt_c = np.clip(nxt, 0, size - 1)
        lw = np.where(ok, logk[None, :] + gibbs.beta * G[i][nxt_c] + bwd[i + 1][nxt_c], -np.inf)
        lw -= logsumexp(lw, axis=1, keepdims=True)
        cdf = np.cumsum(np.exp(lw), axis=1)
        u = gen.random(m)[:, None] * cdf[:, -1:]
        choice = np.minimum((cdf <= u).sum(axis=1), offs.size - 1)
        out[:, i] = choice
        site = nxt[np.arange(m), choice]
    return out


def _in_box(pp, n, site):
    """Whether each step from ``site`` stays inside the box (no wrap across rows)."""
    side = pp.side(n)
    coords = np.stack(np.unravel_index(site, pp.box_shape(n)), axis=1)
    steps = pp.kernel.step_array
    nxt = coords[:, None, :] + steps[None, :, :]
    return np.all((nxt >= 0) & (nxt < side), axis=2)


def metropolis(model: ModelSpec, env, beta: float, cfg: SamplerConfig) -> SampleBatch:
    """Single-spin-flip Metropolis, vectorised over independent chains.

    Samples are split evenly across chains after ``burn_in`` sweeps; the
    split-chain R-hat of the energy is stored in ``metadata``.
    """
    if model.kind is not ModelKind.MIXED_PSPIN:
        raise ValueError(f"MCMC refused for {model.kind.value}: an exact sampler exists")
    mc = cfg.mcmc or McmcConfig()
    n = model.n
    tensors = model.params.coupling_tensors(n, env.g)
    gen = rng_streams.stream(cfg.seed, cfg.replica_id, rng_streams.SAMPLER)
    c = mc.chains
    per_chain = -(-cfg.num_samples // c)
    spins = np.where(gen.random((c, n)) < 0.5, 1.0, -1.0)
    energy = tensor_energies(tensors, spins)
    accepted = 0
    proposals = 0

    def sweep():
        nonlocal energy, accepted, proposals
        for _ in range(n):
            j = gen.integers(0, n, size=c)
            flipped = spins.copy()
            flipped[np.arange(c), j] *= -1.0
            e_new = tensor_energies(tensors, flipped)
            accept = np.log(gen.random(c)) < beta * (e_new - energy)
            spins[accept] = flipped[accept]
            energy = np.where(accept, e_new, energy)
            accepted += int(accept.sum())
            proposals += c

    for _ in range(mc.burn_in):
        sweep()
    draws = np.empty((per_chain, c), dtype=np.int64)
    energies = np.empty((per_chain, c))
    weights = 1 << np.arange(n)
    for t in range(per_chain):
        for _ in range(mc.sweeps_per_sample):
            sweep()
        draws[t] = ((spins > 0) @ weights).astype(np.int64)
        energies[t] = energy
    flat = draws.T.reshape(-1)[: cfg.num_samples]
    meta = {
        "burn_in": mc.burn_in,
        "sweeps_per_sample": mc.sweeps_per_sample,
        "chains": c,
        "acceptance_rate": accepted / max(proposals, 1),
        "split_rhat_energy": split_rhat(energies),
    }
    return SampleBatch(model, flat, False, "metropolis", meta)


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction; ``x`` is ``(draws, chains)``."""
    m = x.shape[0] // 2
    if m < 2:
        return float("nan")
    halves = np.concatenate([x[:m], x[m : 2 * m]], axis=1)
    w = halves.var(axis=0, ddof=1).mean()
    b = m * halves.mean(axis=0).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    return float(math.sqrt(((m - 1) / m * w + b / m) / w))


def pairwise_overlap_sums(model: ModelSpec, samples) -> np.ndarray:
    """``r_j = sum_{k != j} R(sigma^j, sigma^k)`` for every sample ``j``."""
    arr = _as_array(model, samples)
    n = model.n
    if model.kind is ModelKind.REM:
        _, inv, counts = np.unique(arr, return_inverse=True, return_counts=True)
        return (counts[inv] - 1).astype(float)
    if model.kind is ModelKind.DIRECTED_POLYMER:
        sites = paths_sites(model, arr)
        total = np.zeros(len(arr))
        for i in range(n):
            _, inv, counts = np.unique(sites[:, i], return_inverse=True, return_counts=True)
            total += counts[inv] - 1
        return total / n
    # sum_k (s_j . s_k)^p = <s_j^{(x)p}, M_p> with M_p = sum_k s_k^{(x)p}
    spins = np.where((arr[:, None] >> np.arange(n)) & 1, 1.0, -1.0)
    r = np.zeros(len(arr))
    for p, b in model.params.coefficients:
        if p == 2:
            mom = spins.T @ spins
            val = np.einsum("mi,ij,mj->m", spins, mom, spins, optimize=True)
        elif p == 3:
            mom = np.einsum("mi,mj,mk->ijk", spins, spins, spins, optimize=True)
            val = np.einsum("mi,mj,mk,ijk->m", spins, spins, spins, mom, optimize=True)
        else:
            raise NotImplementedError(f"p = {p} overlaps")
        r += b * b * val / n**p
    return r - 1.0


def _as_array(model, samples):
    if isinstance(samples, SampleBatch):
        return samples.array
    if model.is_spin:
        return np.array([validate_state(model, s) for s in samples], dtype=np.int64)
    return np.array([validate_state(model, s) for s in samples], dtype=np.int64).reshape(len(samples), model.n)


def estimate_mean_overlap(samples, model: ModelSpec | None = None) -> tuple[float, float]:
    """U-statistic mean of pairwise overlaps with a jackknife standard error."""
    if model is None:
        if not isinstance(samples, SampleBatch):
            raise TypeError("pass model= when samples is a plain list")
        model = samples.model
    m = len(samples)
    if m < 2:
        raise ValueError("need at least 2 samples")
    r = pairwise_overlap_sums(model, samples)
    total = r.sum()
    est = total / (m * (m - 1))
    if m == 2:
        return float(est), float("nan")
    loo = (total - 2.0 * r) / ((m - 1) * (m - 2))
    se = math.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return float(est), float(se)


def overlap_gram(model: ModelSpec, samples) -> np.ndarray:
    """Matrix ``R_{jk}`` of pairwise overlaps."""
    arr = _as_array(model, samples)
    n = model.n
    if model.kind is ModelKind.REM:
        return (arr[:, None] == arr[None, :]).astype(float)
    if model.kind is ModelKind.DIRECTED_POLYMER:
        s = paths_sites(model, arr)
        return (s[:, None, :] == s[None, :, :]).mean(axis=2)
    spins = np.where((arr[:, None] >> np.arange(n)) & 1, 1.0, -1.0)
    return model.params.xi(spins @ spins.T / n)
