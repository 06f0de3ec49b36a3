"""Exact Gibbs computations.

Spin models are enumerated over all ``2**n`` states (p-spin energies via a
Gray-code walk with incremental flip updates).  Polymers use forward/backward
log-domain transfer matrices over ``(time, site)``; a moment recursion carried
alongside the forward pass gives ``<H>`` and ``Var H`` without pair marginals.
All weights stay in the log domain.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import (
    BudgetExceeded,
    Environment,
    GibbsSummary,
    ModelKind,
    ModelSpec,
    StateId,
    check_environment,
    validate_state,
)
from .models import all_paths, paths_sites, spin_table, tensor_energies

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExactBudget:
    spin_n_max: int = 20
    pspin_n_max: int = 12
    polymer_n_max: int = 64
    polymer_d_max: int = 2
    path_enumeration_max: int = 1 << 20


DEFAULT_BUDGET = ExactBudget()


def check_budget(model: ModelSpec, budget: ExactBudget = DEFAULT_BUDGET) -> None:
    n = model.n
    if model.kind is ModelKind.REM and n > budget.spin_n_max:
        raise BudgetExceeded(f"REM n={n} > {budget.spin_n_max}; use the sampling module")
    if model.kind is ModelKind.MIXED_PSPIN and n > budget.pspin_n_max:
        raise BudgetExceeded(f"p-spin n={n} > {budget.pspin_n_max}; use MCMC sampling")
    if model.kind is ModelKind.DIRECTED_POLYMER:
        if n > budget.polymer_n_max or model.params.d > budget.polymer_d_max:
            raise BudgetExceeded(
                f"polymer n={n}, d={model.params.d} exceeds budget "
                f"(n <= {budget.polymer_n_max}, d <= {budget.polymer_d_max})"
            )
    log.debug("exact engine for %s n=%d: ~%.1f MB", model.kind.value, n, memory_estimate(model) / 2**20)


def memory_estimate(model: ModelSpec) -> int:
    """Rough bytes allocated by the exact engine."""
    if model.is_spin:
        size = (1 << model.n) * (model.n + 4)
    else:
        size = 4 * model.n * model.params.box_size(model.n)
    return 8 * size


def gray_code_energies(model: ModelSpec, g: np.ndarray) -> np.ndarray:
    """All p-spin energies, indexed by bitmask, via single-flip Gray-code updates."""
    n = model.n
    tensors = model.params.coupling_tensors(n, g)
    spins = -np.ones(n)
    h = float(tensor_energies(tensors, spins[None, :])[0])
    out = np.empty(1 << n)
    out[0] = h
    mask = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        h += _flip_delta(tensors, spins, j)
        spins[j] = -spins[j]
        mask ^= 1 << j
        out[mask] = h
    return out


def _flip_delta(tensors, s, j):
    sj = s[j]
    delta = 0.0
    for p, a in tensors:
        if p == 2:
            delta += -2.0 * sj * (a[j] @ s + a[:, j] @ s) + 4.0 * a[j, j]
        else:
            once = s @ a[j] @ s + s @ a[:, j] @ s + s @ a[:, :, j] @ s
            twice = a[j, j] @ s + a[j, :, j] @ s + a[:, j, j] @ s
            delta += -2.0 * sj * once + 4.0 * twice - 8.0 * sj * a[j, j, j]
    return delta


def spin_energies(model: ModelSpec, g: np.ndarray) -> np.ndarray:
    if model.kind is ModelKind.REM:
        return model.params.energies(model.n, g)
    return gray_code_energies(model, g)


def _shift(arr: np.ndarray, step: Sequence[int], fill: float) -> np.ndarray:
    """``out[x] = arr[x - step]``, with ``fill`` where ``x - step`` leaves the box."""
    out = np.full_like(arr, fill)
    src, dst = [], []
    for s, size in zip(step, arr.shape):
        if s >= 0:
            src.append(slice(0, size - s))
            dst.append(slice(s, size))
        else:
            src.append(slice(-s, size))
            dst.append(slice(0, size + s))
    out[tuple(dst)] = arr[tuple(src)]
    return out


class ExactGibbs:
    """Exact Gibbs measure of one ``(model, env, beta)`` triple.

    Quantities are computed lazily and cached; instances are not mutated after
    construction.
    """

    def __init__(self, model: ModelSpec, env: Environment, beta: float, budget: ExactBudget = DEFAULT_BUDGET):
        check_environment(model, env)
        check_budget(model, budget)
        self.model = model
        self.env = env
        self.beta = float(beta)
        self.budget = budget
        self.n = model.n

    # -- spin models -------------------------------------------------------
    @cached_property
    def energies(self) -> np.ndarray:
        """Energy of every enumerated state (spins: by bitmask; polymers: by path row)."""
        if self.model.is_spin:
            return spin_energies(self.model, self.env.g)
        sites = self._path_sites
        box = self.model.params.box_size(self.n)
        return self.env.g[np.arange(self.n) * box + sites].sum(axis=1)

    @cached_property
    def log_probs(self) -> np.ndarray:
        """Normalised log Gibbs weights of every enumerated state."""
        lw = self.beta * self.energies
        if not self.model.is_spin:
            lw = lw + self._path_log_ref
        return lw - logsumexp(lw)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @cached_property
    def spins(self) -> np.ndarray:
        return spin_table(self.n)

    # -- polymer enumeration ----------------------------------------------
    def _require_enumerable(self):
        if self.model.is_spin:
            return
        k = sum(1 for p in self.model.params.kernel.probs if p > 0)
        if k**self.n > self.budget.path_enumeration_max:
            raise BudgetExceeded(
                f"{k}**{self.n} paths exceed the enumeration budget; use sample-based diagnostics"
            )

    @cached_property
    def paths(self) -> np.ndarray:
        self._require_enumerable()
        return all_paths(self.model)

    @cached_property
    def _path_sites(self) -> np.ndarray:
        return paths_sites(self.model, self.paths)

    @cached_property
    def _path_log_ref(self) -> np.ndarray:
        lk = self.model.params.kernel.log_probs
        lr = lk[self.paths].sum(axis=1)
        return lr - logsumexp(lr)

    def states(self) -> list[StateId]:
        """Enumerated states aligned with :attr:`probs`."""
        if self.model.is_spin:
            return list(range(1 << self.n))
        return [tuple(int(s) for s in row) for row in self.paths]

    # -- polymer transfer matrices -----------------------------------------
    @cached_property
    def _transfer(self):
        pp = self.model.params
        n = self.n
        shape = pp.box_shape(n)
        G = self.env.g.reshape((n,) + shape)
        steps = pp.kernel.step_array
        logk = pp.kernel.log_probs
        live = np.isfinite(logk)
        steps, logk = steps[live], logk[live]
        origin = (pp.radius(n),) * pp.d

        fwd = np.full((n + 1,) + shape, -np.inf)
        fwd[0][origin] = 0.0
        ref = np.full(shape, -np.inf)
        ref[origin] = 0.0
        mean = np.zeros(shape)
        var = np.zeros(shape)
        for i in range(1, n + 1):
            cand = np.stack([lk + _shift(fwd[i - 1], s, -np.inf) for s, lk in zip(steps, logk)])
            pre = logsumexp(cand, axis=0)
            with np.errstate(invalid="ignore"):
                w = np.where(np.isfinite(pre), np.exp(cand - pre), 0.0)
            m_sh = np.stack([_shift(mean, s, 0.0) for s in steps])
            v_sh = np.stack([_shift(var, s, 0.0) for s in steps])
            mbar = (w * m_sh).sum(axis=0)
            var = (w * (v_sh + (m_sh - mbar) ** 2)).sum(axis=0)
            mean = mbar + G[i - 1]
            fwd[i] = pre + self.beta * G[i - 1]
            ref = logsumexp(np.stack([lk + _shift(ref, s, -np.inf) for s, lk in zip(steps, logk)]), axis=0)

        end = pp.endpoint_site(n)
        bwd = np.full((n + 1,) + shape, -np.inf)
        if end is None:
            bwd[n] = 0.0
            log_ref_end = 0.0
        else:
            bwd[n].flat[end] = 0.0
            log_ref_end = float(ref.flat[end])
            if not np.isfinite(log_ref_end):
                raise ValueError("pinned endpoint is unreachable by the reference walk")
        for i in range(n, 0, -1):
            nxt = self.beta * G[i - 1] + bwd[i]
            bwd[i - 1] = logsumexp(np.stack([lk + _shift(nxt, -s, -np.inf) for s, lk in zip(steps, logk)]), axis=0)

        log_total = float(logsumexp(fwd[n] + bwd[n]))
        pi_end = np.exp(fwd[n] + bwd[n] - log_total)
        h_mean = float((pi_end * mean).sum())
        h_var = float((pi_end * (var + (mean - h_mean) ** 2)).sum())
        return {
            "fwd": fwd,
            "bwd": bwd,
            "log_total": log_total,
            "log_z": log_total - log_ref_end,
            "h_mean": h_mean,
            "h_var": max(h_var, 0.0),
        }

    def forward_table(self) -> np.ndarray:
        """Log forward weights ``(n + 1, side, ...)`` including the reference walk."""
        return self._transfer["fwd"]

    def backward_table(self) -> np.ndarray:
        return self._transfer["bwd"]

    @cached_property
    def marginals(self) -> np.ndarray:
        """``mu[i - 1, site]`` = probability that sigma(i) is at flat ``site``."""
        if self.model.kind is not ModelKind.DIRECTED_POLYMER:
            raise TypeError("marginals are defined for polymer models only")
        t = self._transfer
        lm = t["fwd"][1:] + t["bwd"][1:] - t["log_total"]
        return np.exp(lm).reshape(self.n, -1)

    # -- shared quantities ------------------------------------------------
    @cached_property
    def log_z(self) -> float:
        if self.model.is_spin:
            return float(logsumexp(self.beta * self.energies) - self.n * math.log(2.0))
        return self._transfer["log_z"]

    @cached_property
    def _energy_moments(self) -> tuple[float, float]:
        if self.model.is_spin:
            p = self.probs
            m = float(p @ self.energies)
            return m, float(p @ (self.energies - m) ** 2)
        t = self._transfer
        return t["h_mean"], t["h_var"]

    @cached_property
    def feature_means(self) -> np.ndarray:
        """Gibbs averages of every feature, in the model's layout."""
        n = self.n
        if self.model.kind is ModelKind.REM:
            return math.sqrt(n) * self.probs
        if self.model.kind is ModelKind.DIRECTED_POLYMER:
            return self.marginals.reshape(-1)
        parts = []
        for p, c, _ in self.model.params.blocks(n):
            parts.append(c * self._spin_correlation(p).reshape(-1))
        return np.concatenate(parts)

    def _spin_correlation(self, p: int) -> np.ndarray:
        s, w = self.spins, self.probs
        if p == 2:
            return s.T @ (w[:, None] * s)
        return np.einsum("m,mi,mj,mk->ijk", w, s, s, s, optimize=True)

    @cached_property
    def mean_overlap(self) -> float:
        """``(1/n) sum_i <phi_i>^2``: the Gibbs-averaged replica overlap."""
        if self.model.kind is ModelKind.REM:
            return float(self.probs @ self.probs)
        if self.model.kind is ModelKind.DIRECTED_POLYMER:
            mu = self.marginals
            return float((mu * mu).sum() / self.n)
        fm = self.feature_means
        return float(fm @ fm / self.n)

    @cached_property
    def conditional_overlaps(self) -> np.ndarray:
        """``R(sigma)`` for every enumerated state, aligned with :attr:`probs`."""
        n = self.n
        if self.model.kind is ModelKind.REM:
            return self.probs.copy()
        if self.model.kind is ModelKind.DIRECTED_POLYMER:
            mu = self.marginals
            return mu[np.arange(n), self._path_sites].mean(axis=1)
        s = self.spins
        out = np.zeros(s.shape[0])
        for p, b in self.model.params.coefficients:
            c = self._spin_correlation(p)
            if p == 2:
                val = ((s @ c) * s).sum(axis=1)
            else:
                ss = (s[:, :, None] * s[:, None, :]).reshape(s.shape[0], -1)
                val = ((ss @ c.reshape(n, n * n).T) * s).sum(axis=1)
            out += b * b * val / n**p
        return out

    def conditional_overlap(self, sigma: StateId) -> float:
        """``R(sigma) = (1/n) sum_i phi_i(sigma) <phi_i>``."""
        sigma = validate_state(self.model, sigma)
        if self.model.kind is ModelKind.DIRECTED_POLYMER:
            sites = self.model.params.sites(self.n, sigma)
            return float(self.marginals[np.arange(self.n), sites].mean())
        return float(self.conditional_overlaps[sigma])

    def energy_concentration(self) -> float:
        """``<|H/n - F'|>`` over the Gibbs measure (enumeration only)."""
        self._require_enumerable()
        h = self.energies / self.n
        return float(self.probs @ np.abs(h - self.probs @ h))

    @cached_property
    def summary(self) -> GibbsSummary:
        m, v = self._energy_moments
        return GibbsSummary(
            beta=self.beta,
            log_z=self.log_z,
            free_energy=self.log_z / self.n,
            free_energy_derivative=m / self.n,
            free_energy_second_derivative=v / self.n,
            mean_overlap=self.mean_overlap,
        )


def log_partition(model, env, beta, budget=DEFAULT_BUDGET) -> float:
    return ExactGibbs(model, env, beta, budget).log_z


def free_energy_profile(model, env, betas, budget=DEFAULT_BUDGET) -> list[GibbsSummary]:
    return [ExactGibbs(model, env, b, budget).summary for b in betas]


def mean_overlap(model, env, beta, budget=DEFAULT_BUDGET) -> float:
    return ExactGibbs(model, env, beta, budget).mean_overlap


def conditional_overlap(model, env, beta, sigma, budget=DEFAULT_BUDGET) -> float:
    return ExactGibbs(model, env, beta, budget).conditional_overlap(sigma)


def polymer_marginals(model, env, beta, budget=DEFAULT_BUDGET) -> np.ndarray:
    return ExactGibbs(model, env, beta, budget).marginals


def energy_concentration(model, env, beta, budget=DEFAULT_BUDGET) -> float:
    return ExactGibbs(model, env, beta, budget).energy_concentration()


def is_convex_profile(profile: Sequence[GibbsSummary], tol: float = 1e-12) -> bool:
    return all(s.free_energy_second_derivative >= -tol for s in profile)


def spin_feature_matrix(model: ModelSpec) -> np.ndarray:
    """``phi_i(sigma)`` for all states (rows) of a p-spin model."""
    return np.stack([model.params.feature_vector(model.n, m) for m in range(1 << model.n)])


def batch_spin_stats(model: ModelSpec, envs: np.ndarray, beta: float, phi: np.ndarray | None = None) -> dict:
    """Vectorised ``log Z``, ``F'`` and mean overlap for a stack of environments.

    ``envs`` has shape ``(batch, feature_count)``.  Used by replica-heavy
    experiments; agrees with :class:`ExactGibbs` state by state.
    """
    envs = np.atleast_2d(envs)
    n = model.n
    if model.kind is ModelKind.REM:
        h = math.sqrt(n) * envs
    elif model.kind is ModelKind.MIXED_PSPIN:
        if phi is None:
            phi = spin_feature_matrix(model)
        h = envs @ phi.T
    else:
        raise TypeError("batch_spin_stats handles spin models only")
    lw = beta * h
    lse = logsumexp(lw, axis=1)
    p = np.exp(lw - lse[:, None])
    fprime = (p * h).sum(axis=1) / n
    if model.kind is ModelKind.REM:
        overlap = (p * p).sum(axis=1)
    else:
        fm = p @ phi
        overlap = (fm * fm).sum(axis=1) / n
    return {
        "log_z": lse - n * math.log(2.0),
        "fprime": fprime,
        "mean_overlap": overlap,
        "probs": p,
    }
