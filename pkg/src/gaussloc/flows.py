"""Environment dynamics: the stationary Ornstein-Uhlenbeck flow on the
disorder and the discrete perturbations ``g + (h_1 + ... + h_k) / sqrt(n)``.

The generator integrand for ``f = F_n`` is ``Lf = beta^2 (1 - <R_12>) - beta F'``
and ``|grad f|^2 = (beta^2 / n) <R_12>``; both come straight from the exact
engine, so the experiments here only add time quadrature and Monte Carlo over
environments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import rng as rng_streams
from .core import DimensionMismatch, Environment, ModelKind, ModelSpec, check_environment
from .exact import ExactGibbs, batch_spin_stats, spin_feature_matrix
from .models import rem_limit_derivative

GRID_POINTS = 32


@dataclass(frozen=True)
class OUTrajectory:
    times: np.ndarray
    envs: list
    integrand: np.ndarray


@dataclass(frozen=True)
class PerturbationStack:
    base: Environment
    h: Sequence[Environment]
    n: int

    def __post_init__(self):
        for e in self.h:
            if e.dim != self.base.dim:
                raise DimensionMismatch("perturbation environments must share the base dimension")

    @property
    def k(self) -> int:
        return len(self.h)


@dataclass
class FlowReport:
    beta: float
    T: float
    t: float
    trajectories: int
    variance_lhs: float = float("nan")
    variance_lhs_se: float = float("nan")
    variance_rhs: float = float("nan")
    variance_rhs_se: float = float("nan")
    combined_se: float = float("nan")
    passed: bool = False
    integrand_mean: float = float("nan")
    integrand_mean_se: float = float("nan")
    refinement_shift: float = float("nan")
    refinement_ok: bool = True
    kappa_target: float = float("nan")
    kappa_label: str = ""
    extra: dict = field(default_factory=dict)


def ou_step(g: np.ndarray, t: float, xi: np.ndarray) -> np.ndarray:
    """Exact OU transition of duration ``t`` given standard normal noise ``xi``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return math.exp(-t) * g + math.sqrt(-math.expm1(-2.0 * t)) * xi


def ou_evolve(env: Environment, t: float, noise_seed: int, replica_id: int = 0) -> Environment:
    """One-shot OU transition ``e^{-t} g + sqrt(1 - e^{-2t}) xi``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return env
    xi = rng_streams.stream(noise_seed, replica_id, rng_streams.OU_NOISE).standard_normal(env.dim)
    return env.replace(ou_step(env.g, t, xi))


def ou_path(g0: np.ndarray, times: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Exact OU snapshots at increasing ``times`` (``times[0]`` is the start)."""
    out = np.empty((len(times),) + g0.shape)
    out[0] = g0
    for j in range(1, len(times)):
        out[j] = ou_step(out[j - 1], times[j] - times[j - 1], gen.standard_normal(g0.shape))
    return out


def ou_trajectory(model: ModelSpec, env: Environment, beta: float, t: float, noise_seed: int, replica_id: int = 0, points: int = GRID_POINTS) -> OUTrajectory:
    """Exact OU snapshots on a uniform grid over ``[0, t]`` with the integrand at each."""
    check_environment(model, env)
    times = np.linspace(0.0, t, points)
    gs = ou_path(env.g, times, rng_streams.stream(noise_seed, replica_id, rng_streams.OU_NOISE))
    envs = [env] + [env.replace(g) for g in gs[1:]]
    lf = np.array([ou_generator_integrand(model, e, beta) for e in envs])
    return OUTrajectory(times, envs, lf)


def ou_generator_integrand(model: ModelSpec, env: Environment, beta: float) -> float:
    """``Lf`` at ``env`` for ``f = F_n``: ``beta^2 (1 - <R_12>) - beta F'``."""
    s = ExactGibbs(model, env, beta).summary
    return beta * beta * (1.0 - s.mean_overlap) - beta * s.free_energy_derivative


def gradient_norm_sq(model: ModelSpec, env: Environment, beta: float) -> float:
    """``|grad F_n|^2 = (beta^2 / n^2) sum_i <phi_i>^2``."""
    return beta * beta * ExactGibbs(model, env, beta).mean_overlap / model.n


class _Evaluator:
    """Gibbs statistics for stacks of environments, batched when possible."""

    def __init__(self, model: ModelSpec, beta: float, chunk: int = 256):
        self.model = model
        self.beta = beta
        self.chunk = chunk
        self.phi = spin_feature_matrix(model) if model.kind is ModelKind.MIXED_PSPIN else None

    def __call__(self, envs: np.ndarray) -> dict:
        envs = np.atleast_2d(envs)
        keys = ("log_z", "fprime", "mean_overlap")
        if self.model.is_spin:
            parts = [batch_spin_stats(self.model, envs[i : i + self.chunk], self.beta, self.phi) for i in range(0, len(envs), self.chunk)]
            return {k: np.concatenate([p[k] for p in parts]) for k in keys}
        out = {k: np.empty(len(envs)) for k in keys}
        for r, g in enumerate(envs):
            s = ExactGibbs(self.model, Environment(g), self.beta).summary
            out["log_z"][r] = s.log_z
            out["fprime"][r] = s.free_energy_derivative
            out["mean_overlap"][r] = s.mean_overlap
        return out


def _integrand(beta, st):
    return beta * beta * (1.0 - st["mean_overlap"]) - beta * st["fprime"]


def _var_se(x: np.ndarray) -> tuple[float, float]:
    """Sample variance and its standard error ``sqrt((m4 - (N-3)/(N-1) s^4) / N)``."""
    n = x.size
    s2 = float(x.var(ddof=1))
    m4 = float(np.mean((x - x.mean()) ** 4))
    return s2, math.sqrt(max(m4 - (n - 3) / (n - 1) * s2 * s2, 0.0) / n)


def _trapezoid_mean(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Time average ``(1/t) int_0^t`` along axis 0."""
    span = times[-1] - times[0]
    if span == 0:
        return values[0]
    dt = np.diff(times)[:, None]
    return ((values[1:] + values[:-1]) * dt / 2.0).sum(axis=0) / span


def _snapshots(model, beta, t, replicas, seed, points):
    """Per-replica OU trajectories evaluated on a uniform grid of ``points`` times."""
    times = np.linspace(0.0, t, points)
    ev = _Evaluator(model, beta)
    dim = model.feature_count
    g = np.stack([rng_streams.stream(seed, r, rng_streams.ENVIRONMENT).standard_normal(dim) for r in range(replicas)])
    gens = [rng_streams.stream(seed, r, rng_streams.OU_NOISE) for r in range(replicas)]
    stats_t = []
    for j, tj in enumerate(times):
        if j > 0:
            dt = tj - times[j - 1]
            xi = np.stack([gn.standard_normal(dim) for gn in gens])
            g = ou_step(g, dt, xi)
        stats_t.append(ev(g))
    return times, {k: np.stack([s[k] for s in stats_t]) for k in stats_t[0]}


def ou_variance_experiment(model: ModelSpec, beta: float, T: float, trajectories: int, seed: int) -> FlowReport:
    """Monte Carlo check of ``Var((1/t) int_0^t Lf) <= (2/t) E|grad f|^2`` with ``t = T/n``.

    Trajectories are simulated on a fine grid of ``2*GRID_POINTS - 1`` times;
    the reported integral uses every other point (``GRID_POINTS``) and the
    fine grid measures the quadrature error.
    """
    if trajectories < 30:
        raise ValueError("at least 30 trajectories are required")
    n = model.n
    t = T / n
    rep = FlowReport(beta, T, t, trajectories)
    if beta == 0:
        rep.variance_lhs = rep.variance_rhs = 0.0
        rep.variance_lhs_se = rep.variance_rhs_se = rep.combined_se = 0.0
        rep.integrand_mean = rep.integrand_mean_se = 0.0
        rep.refinement_shift = 0.0
        rep.passed = True
        return rep
    times, st = _snapshots(model, beta, t, trajectories, seed, 2 * GRID_POINTS - 1)
    lf = _integrand(beta, st)
    coarse = _trapezoid_mean(lf[::2], times[::2])
    fine = _trapezoid_mean(lf, times)
    lhs, lhs_se = _var_se(coarse)
    fine_var, _ = _var_se(fine)
    grad = beta * beta * _trapezoid_mean(st["mean_overlap"][::2], times[::2]) / n
    rhs_vals = (2.0 / t) * grad
    rep.variance_lhs, rep.variance_lhs_se = lhs, lhs_se
    rep.variance_rhs = float(rhs_vals.mean())
    rep.variance_rhs_se = float(rhs_vals.std(ddof=1) / math.sqrt(trajectories))
    rep.combined_se = math.hypot(lhs_se, rep.variance_rhs_se)
    rep.passed = rep.variance_lhs <= rep.variance_rhs + 3.0 * rep.combined_se
    rep.integrand_mean = float(lf[0].mean())
    rep.integrand_mean_se = float(lf[0].std(ddof=1) / math.sqrt(trajectories))
    rep.refinement_shift = abs(fine_var - lhs)
    rep.refinement_ok = rep.refinement_shift < max(lhs_se, 1e-300)
    rep.extra = {"time_average": coarse, "rhs": rhs_vals, "integrand_t0": lf[0]}
    return rep


def kappa_reference(model: ModelSpec, beta: float, mean_fprime: float | None = None) -> tuple[float, str]:
    """``(beta - p'(beta)) / beta``: closed form for REM, disorder-averaged F' otherwise."""
    if beta <= 0:
        return 0.0, "exact"
    if model.kind is ModelKind.REM:
        return (beta - rem_limit_derivative(beta)) / beta, "rem-limit"
    if mean_fprime is None:
        raise ValueError("surrogate kappa needs the disorder-averaged F'")
    return (beta - mean_fprime) / beta, "surrogate"


@dataclass(frozen=True)
class TimeAverage:
    value: float
    ci: tuple[float, float]
    standard_error: float
    kappa: float
    kappa_label: str
    gap: float
    gap_se: float
    per_replica: np.ndarray = field(repr=False)


def time_averaged_overlap(model: ModelSpec, beta: float, T: float, replicas: int, seed: int, points: int = GRID_POINTS) -> TimeAverage:
    """Disorder average of ``(n/T) int_0^{T/n} <R_12>_t dt`` with a 95% CI.

    ``gap`` is ``E|X_T - kappa|`` where ``X_T`` is one replica's time average;
    unlike ``|E X_T - kappa|`` it feels the shrinking time-average fluctuations.
    """
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    t = T / model.n
    times, st = _snapshots(model, beta, t, replicas, seed, points if t > 0 else 1)
    x = _trapezoid_mean(st["mean_overlap"], times)
    se = float(x.std(ddof=1) / math.sqrt(replicas))
    mean = float(x.mean())
    kappa, label = kappa_reference(model, beta, float(st["fprime"].mean()))
    dev = np.abs(x - kappa)
    return TimeAverage(
        mean,
        (mean - 1.96 * se, mean + 1.96 * se),
        se,
        kappa,
        label,
        float(dev.mean()),
        float(dev.std(ddof=1) / math.sqrt(replicas)),
        x,
    )


def perturb(stack: PerturbationStack) -> Environment:
    """``g + (1/sqrt(n)) sum_j h_j``."""
    if stack.k == 0:
        return stack.base
    total = np.sum([e.g for e in stack.h], axis=0)
    return stack.base.replace(stack.base.g + total / math.sqrt(stack.n))


def perturbation_stack(model: ModelSpec, base: Environment, k: int, seed: int, replica_id: int = 0) -> PerturbationStack:
    gen = rng_streams.stream(seed, replica_id, rng_streams.PERTURBATION)
    hs = [Environment(gen.standard_normal(model.feature_count)) for _ in range(k)]
    return PerturbationStack(base, hs, model.n)


@dataclass(frozen=True)
class KsReport:
    beta: float
    beta_equivalent: float
    k: int
    replicas: int
    ks_free_energy: float
    p_free_energy: float
    ks_overlap: float
    p_overlap: float
    samples: dict = field(default_factory=dict, repr=False)


def temperature_equivalence_test(model: ModelSpec, beta: float, k: int, replicas: int, seed: int) -> KsReport:
    """Two-sample KS of ``F_n`` (and ``<R_12>``): perturbed environment at ``beta``
    versus a fresh environment at ``beta * sqrt(1 + k/n)``."""
    if replicas < 100:
        raise ValueError("at least 100 replicas are required")
    n = model.n
    dim = model.feature_count
    beta_eq = beta * math.sqrt(1.0 + k / n)
    pert = np.empty((replicas, dim))
    fresh = np.empty((replicas, dim))
    for r in range(replicas):
        base = Environment(rng_streams.stream(seed, r, rng_streams.ENVIRONMENT).standard_normal(dim))
        pert[r] = perturb(perturbation_stack(model, base, k, seed, r)).g
        fresh[r] = rng_streams.stream(seed, r, rng_streams.TRIALS).standard_normal(dim)
    a = _Evaluator(model, beta)(pert)
    b = _Evaluator(model, beta_eq)(fresh)
    f_a, f_b = a["log_z"] / n, b["log_z"] / n
    ks_f = stats.ks_2samp(f_a, f_b)
    ks_r = stats.ks_2samp(a["mean_overlap"], b["mean_overlap"])
    samples = {
        "F_perturbed": f_a,
        "F_equivalent": f_b,
        "R_perturbed": a["mean_overlap"],
        "R_equivalent": b["mean_overlap"],
    }
    return KsReport(
        beta, beta_eq, k, replicas,
        float(ks_f.statistic), float(ks_f.pvalue), float(ks_r.statistic), float(ks_r.pvalue),
        samples,
    )


def _perturbation_energies(gibbs: ExactGibbs, h_env: Environment) -> np.ndarray:
    """``sum_i h_i phi_i(sigma)`` over the enumerated states."""
    from .exact import spin_energies

    model = gibbs.model
    check_environment(model, h_env)
    if model.is_spin:
        return spin_energies(model, h_env.g)
    box = model.params.box_size(model.n)
    return h_env.g[np.arange(model.n) * box + gibbs._path_sites].sum(axis=1)


def inclusion_factor(model: ModelSpec, env: Environment, h_env: Environment, beta: float) -> float:
    """``X = sqrt(2 <e^{2b H_h}>) <e^{-b H_h}>`` with ``b = beta / sqrt(n)``."""
    gibbs = ExactGibbs(model, env, beta)
    return _inclusion_from(gibbs, _perturbation_energies(gibbs, h_env))


def _inclusion_from(gibbs: ExactGibbs, hh: np.ndarray) -> float:
    b = gibbs.beta / math.sqrt(gibbs.n)
    lp = gibbs.log_probs
    log_x = 0.5 * (math.log(2.0) + logsumexp(lp + 2.0 * b * hh)) + logsumexp(lp - b * hh)
    return float(math.exp(log_x))


def check_inclusion(model: ModelSpec, env: Environment, h_env: Environment, beta: float, delta: float) -> tuple[bool, float]:
    """State-by-state check of ``A_delta(g) subset A_{X sqrt(delta)}(g + h/sqrt(n))``.

    Returns ``(holds, worst_margin)`` where the margin is
    ``max over A_delta of R'(sigma) - X sqrt(delta)`` (non-positive when it holds).
    """
    g0 = ExactGibbs(model, env, beta)
    hh = _perturbation_energies(g0, h_env)
    x = _inclusion_from(g0, hh)
    g1 = ExactGibbs(model, env.replace(env.g + h_env.g / math.sqrt(model.n)), beta)
    inside = g0.conditional_overlaps <= delta
    if not inside.any():
        return True, -math.inf
    margin = float(np.max(g1.conditional_overlaps[inside]) - x * math.sqrt(delta))
    return margin <= 1e-12, margin


def overlap_matrix(gibbs: ExactGibbs) -> np.ndarray:
    """``R(sigma, tau)`` over all enumerated states (small instances)."""
    from .sampling import overlap_gram

    return overlap_gram(gibbs.model, gibbs.states())


def h_variance_exact(gibbs: ExactGibbs, f: np.ndarray, t: float) -> float:
    """``Var_h <f e^{(t/sqrt n) sum h phi}> = e^{t^2} <f f (e^{t^2 R_12} - 1)>``."""
    p = gibbs.probs * f
    r = overlap_matrix(gibbs)
    return float(math.exp(t * t) * p @ np.expm1(t * t * r) @ p)


def h_variance_bounds(gibbs: ExactGibbs, f: np.ndarray, t: float) -> tuple[float, float]:
    """Bounds (a) for square-integrable ``f`` and (b) for ``f`` valued in ``[0, 1]``."""
    e = math.exp(2.0 * t * t)
    a = e * float(gibbs.probs @ (f * f)) * math.sqrt(gibbs.mean_overlap)
    b = e * float(gibbs.probs @ (f * gibbs.conditional_overlaps))
    return a, b
