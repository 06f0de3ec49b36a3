"""Localization statistics and the overlap-geometry lemmas.

``A_delta`` is the set of states whose conditional overlap ``R(sigma)`` is at
most ``delta``; ``B_delta`` is the disorder event ``<R_12> <= delta``.  Ball
covers, pair-in-ball search and orthogonal extraction operate on states of a
single exact Gibbs measure or on sampled replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BudgetExceeded, ModelKind, PreconditionError, StateId, overlap, validate_state
from .exact import ExactGibbs
from .models import paths_sites
from .sampling import SamplerConfig, overlap_gram, sample_states


@dataclass(frozen=True)
class CoverReport:
    k: int
    centers: list
    covered_fraction: float
    standard_error: float = 0.0
    exact: bool = True


@dataclass(frozen=True)
class LocalizationReport:
    beta: float
    delta: float
    epsilon: float | None
    a_delta_mass: float
    b_delta: bool
    cover: CoverReport | None = None

    def __post_init__(self):
        if not 0.0 <= self.a_delta_mass <= 1.0 + 1e-12:
            raise ValueError("a_delta_mass outside [0, 1]")


# absolute slack on overlap thresholds so that ties such as R = 2**-n survive rounding
TIE_TOL = 1e-12


def _check_delta(delta):
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")


def a_delta_mass(gibbs: ExactGibbs, delta: float) -> float:
    """Gibbs mass of ``{sigma : R(sigma) <= delta}``."""
    _check_delta(delta)
    return float(min(1.0, gibbs.probs[gibbs.conditional_overlaps <= delta + TIE_TOL].sum()))


def a_delta_mass_sampled(gibbs: ExactGibbs, samples: Sequence[StateId], delta: float) -> tuple[float, float]:
    """Estimate of :func:`a_delta_mass` from Gibbs samples, with CLT standard error."""
    _check_delta(delta)
    hits = np.array([gibbs.conditional_overlap(s) <= delta + TIE_TOL for s in samples], dtype=float)
    m = hits.size
    se = float(hits.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
    return float(hits.mean()), se


def b_delta_indicator(gibbs: ExactGibbs, delta: float) -> bool:
    _check_delta(delta)
    return bool(gibbs.mean_overlap <= delta + TIE_TOL)


def covered_mask(gibbs: ExactGibbs, centers: Sequence[StateId], delta: float) -> np.ndarray:
    """For each enumerated state, whether it lies in some ``B(center, delta)``."""
    model = gibbs.model
    n = model.n
    mask = np.zeros(gibbs.probs.size, dtype=bool)
    if model.kind is ModelKind.REM:
        if delta <= 1.0:
            mask[list(centers)] = True
        return mask
    if model.kind is ModelKind.MIXED_PSPIN:
        spins = gibbs.spins
        for c in centers:
            mask |= model.params.xi(spins @ spins[c] / n) >= delta
        return mask
    sites = gibbs._path_sites
    for c in centers:
        cs = paths_sites(model, np.asarray([c]))[0]
        mask |= (sites == cs).mean(axis=1) >= delta
    return mask


def ball_cover(gibbs: ExactGibbs, sampler_cfg: SamplerConfig, k: int, delta: float, eval_samples: int = 0) -> CoverReport:
    """Mass of the union of overlap balls around ``k`` distinct sampled centers.

    Centers are drawn i.i.d. from the Gibbs measure and deduplicated; draws
    continue until ``k`` distinct centers exist (or the support is exhausted).
    Coverage is exact when the instance is enumerable, otherwise estimated
    on ``eval_samples`` fresh draws.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_delta(delta)
    support = int(np.count_nonzero(gibbs.probs > 0)) if _enumerable(gibbs) else None
    centers = draw_distinct_centers(gibbs, k, sampler_cfg.seed, sampler_cfg.replica_id, support, sampler_cfg.mcmc)
    if support is not None:
        frac = float(gibbs.probs[covered_mask(gibbs, centers, delta)].sum())
        return CoverReport(len(centers), centers, min(frac, 1.0), 0.0, True)
    if eval_samples < 2:
        raise ValueError("eval_samples >= 2 required when coverage cannot be enumerated")
    cfg = SamplerConfig(sampler_cfg.seed ^ 0x5EED, eval_samples, sampler_cfg.mcmc, sampler_cfg.replica_id)
    ev = sample_states(gibbs, cfg)
    hits = np.array([max(overlap(gibbs.model, c, s) for c in centers) >= delta for s in ev.states], dtype=float)
    return CoverReport(len(centers), centers, float(hits.mean()), float(hits.std(ddof=1) / math.sqrt(hits.size)), False)


CENTER_BATCH = 256


def draw_distinct_centers(gibbs, k: int, seed: int, stream_id: int = 0, support: int | None = None, mcmc=None) -> list:
    """First ``k`` distinct states of an i.i.d. Gibbs sample sequence.

    The draw sequence does not depend on ``k``, so prefixes are nested in
    ``k``.  Stops early if the support (when known)
    has fewer than ``k`` states.
    """
    target = k if support is None else min(k, support)
    out, seen = [], set()
    batch = 0
    while len(out) < target and batch < 1000:
        cfg = SamplerConfig(seed, CENTER_BATCH, mcmc, replica_id=(stream_id << 10) + batch)
        for s in sample_states(gibbs, cfg).states:
            if s not in seen:
                seen.add(s)
                out.append(s)
                if len(out) == target:
                    break
        batch += 1
    return out


def _enumerable(gibbs: ExactGibbs) -> bool:
    try:
        gibbs.probs
        return True
    except BudgetExceeded:
        return False


def coverage_of(gibbs: ExactGibbs, centers: Sequence[StateId], delta: float) -> float:
    """Exact mass of ``union_j B(centers[j], delta)``."""
    return float(gibbs.probs[covered_mask(gibbs, centers, delta)].sum())


def pair_in_ball(model, states: Sequence[StateId], sigma0: StateId, delta: float) -> tuple[int, int] | None:
    """A pair ``j < k`` with ``R(states[j], states[k]) >= delta**2 / 2``, if one exists.

    Every state must satisfy ``R(sigma0, state) >= delta``.  Existence is
    guaranteed once ``len(states) >= min_pair_count(delta)``.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    states = [validate_state(model, s) for s in states]
    for j, s in enumerate(states):
        if overlap(model, sigma0, s) < delta - 1e-12:
            raise PreconditionError(f"state {j} lies outside B(sigma0, {delta})")
    if len(states) < 2:
        return None
    gram = overlap_gram(model, states)
    np.fill_diagonal(gram, -np.inf)
    j, k = np.unravel_index(int(np.argmax(gram)), gram.shape)
    if gram[j, k] >= delta * delta / 2 - 1e-12:
        return (int(min(j, k)), int(max(j, k)))
    return None


def min_pair_count(delta: float) -> int:
    """Smallest family size for which a close pair is guaranteed: ``ceil(2/delta^2) + 1``."""
    return math.ceil(2.0 / (delta * delta) - 1e-12) + 1


def extract_orthogonal(gibbs: ExactGibbs, eps1: float, eps2: float, N: int) -> list[StateId]:
    """``N`` states of ``A_{eps1*eps2/N}`` with pairwise overlaps ``< eps2``.

    Greedy: walk the set in order of decreasing Gibbs mass and keep a state
    when it is outside every kept state's ``eps2``-ball.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    delta = eps1 * eps2 / N
    in_a = gibbs.conditional_overlaps <= delta + TIE_TOL
    mass = float(gibbs.probs[in_a].sum())
    if mass < eps1:
        raise PreconditionError(f"A_delta has mass {mass:.4g} < eps1 = {eps1}")
    states = gibbs.states()
    order = [i for i in np.argsort(-gibbs.probs, kind="stable") if in_a[i]]
    chosen: list[StateId] = []
    for i in order:
        s = states[i]
        if all(overlap(gibbs.model, c, s) < eps2 for c in chosen):
            chosen.append(s)
            if len(chosen) == N:
                return chosen
    raise RuntimeError(
        f"greedy extraction stopped at {len(chosen)} < {N} states; this contradicts the "
        "extraction lemma and indicates a bug"
    )


def gram_min_eigenvalue(model, states: Sequence[StateId]) -> float:
    return float(np.linalg.eigvalsh(overlap_gram(model, states)).min())


def localization_report(gibbs: ExactGibbs, delta: float, epsilon: float | None = None, cover: CoverReport | None = None) -> LocalizationReport:
    return LocalizationReport(gibbs.beta, delta, epsilon, a_delta_mass(gibbs, delta), b_delta_indicator(gibbs, delta), cover)


def temperature_bound(gibbs0: ExactGibbs, gibbs1: ExactGibbs, factor: float = 1.0) -> float:
    """``factor * sqrt(n (beta1 - beta0) (F'(beta1) - F'(beta0)))``."""
    n = gibbs0.n
    db = gibbs1.beta - gibbs0.beta
    df = gibbs1.summary.free_energy_derivative - gibbs0.summary.free_energy_derivative
    return factor * math.sqrt(max(n * db * df, 0.0))
