import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gaussloc.core import Environment
from gaussloc.exact import ExactGibbs, batch_spin_stats, log_partition
from gaussloc.flows import (
    GRID_POINTS,
    PerturbationStack,
    check_inclusion,
    gradient_norm_sq,
    h_variance_bounds,
    h_variance_exact,
    inclusion_factor,
    kappa_reference,
    ou_evolve,
    ou_generator_integrand,
    ou_step,
    ou_trajectory,
    ou_variance_experiment,
    perturb,
    perturbation_stack,
    temperature_equivalence_test,
    time_averaged_overlap,
)
from gaussloc.models import build_model, rem_limit_mean_overlap, sample_environment

BIG = 100_000


def big_env(seed):
    return Environment(np.random.default_rng(seed).standard_normal(BIG))


def test_ou_zero_time_is_identity():
    env = big_env(0)
    assert ou_evolve(env, 0.0, 5) is env or np.array_equal(ou_evolve(env, 0.0, 5).g, env.g)
    with pytest.raises(ValueError):
        ou_evolve(env, -1.0, 5)


def test_ou_marginal_stays_standard_normal():
    g = ou_evolve(big_env(1), 0.7, 3).g
    assert stats.kstest(g, "norm").pvalue > 0.01


def test_ou_covariance_at_half():
    g0 = big_env(2).g
    gt = ou_evolve(Environment(g0), 0.5, 4).g
    prod = g0 * gt
    assert abs(prod.mean() - math.exp(-0.5)) <= 3 * prod.std(ddof=1) / math.sqrt(BIG)


def test_ou_two_steps_compose():
    gen = np.random.default_rng(7)
    g0 = gen.standard_normal(BIG)
    g2 = ou_step(ou_step(g0, 0.3, gen.standard_normal(BIG)), 0.4, gen.standard_normal(BIG))
    prod = g0 * g2
    assert abs(prod.mean() - math.exp(-0.7)) <= 3 * prod.std(ddof=1) / math.sqrt(BIG)
    assert abs(g2.var() - 1.0) < 0.02


def test_ou_is_reproducible():
    m = build_model("rem", 4)
    env = sample_environment(m, 0)
    a = ou_trajectory(m, env, 1.0, 0.5, noise_seed=9)
    b = ou_trajectory(m, env, 1.0, 0.5, noise_seed=9)
    assert len(a.times) == GRID_POINTS
    assert np.array_equal(a.integrand, b.integrand)
    assert np.array_equal(a.envs[0].g, env.g)


def test_integrand_vanishes_at_beta_zero(small_model):
    assert ou_generator_integrand(small_model, sample_environment(small_model, 0), 0.0) == 0.0


def _fd_generator(m, g, beta, h=1e-4):
    f = lambda x: log_partition(m, Environment(x), beta) / m.n
    f0 = f(g)
    lap = grad_dot = 0.0
    for i in range(g.size):
        e = np.zeros_like(g)
        e[i] = h
        fp, fm = f(g + e), f(g - e)
        lap += (fp - 2 * f0 + fm) / h**2
        grad_dot += g[i] * (fp - fm) / (2 * h)
    return lap - grad_dot


@pytest.mark.parametrize("beta", [0.5, 1.5])
def test_integrand_matches_finite_difference_generator(beta):
    m = build_model("rem", 4)
    env = sample_environment(m, 3)
    assert ou_generator_integrand(m, env, beta) == pytest.approx(_fd_generator(m, env.g, beta), abs=1e-5)


def test_gradient_norm_finite_difference():
    m = build_model("polymer", 3, {"d": 1})
    env = sample_environment(m, 1)
    h = 1e-5
    f = lambda x: log_partition(m, Environment(x), 1.2) / m.n
    grad = np.array([(f(env.g + h * e) - f(env.g - h * e)) / (2 * h) for e in np.eye(env.dim)])
    assert gradient_norm_sq(m, env, 1.2) == pytest.approx(grad @ grad, abs=1e-8)


def test_integrand_stationary_mean_zero():
    m = build_model("rem", 8)
    envs = np.random.default_rng(11).standard_normal((2000, m.feature_count))
    s = batch_spin_stats(m, envs, 1.5)
    lf = 1.5**2 * (1 - s["mean_overlap"]) - 1.5 * s["fprime"]
    assert abs(lf.mean()) <= 3 * lf.std(ddof=1) / math.sqrt(lf.size)


def test_variance_experiment_beta_zero():
    rep = ou_variance_experiment(build_model("rem", 6), 0.0, 4.0, 100, 1)
    assert rep.variance_lhs == 0.0 and rep.variance_rhs == 0.0 and rep.passed


def test_variance_experiment_rem():
    m = build_model("rem", 8)
    rep = ou_variance_experiment(m, 1.5, 4.0, 1000, 20240104)
    assert rep.passed
    assert rep.variance_rhs <= (2 / rep.t) * 1.5**2 / m.n + 1e-12
    assert abs(rep.integrand_mean) <= 3 * rep.integrand_mean_se
    assert rep.refinement_ok


@given(st.integers(0, 1000), st.floats(0.1, 3.0))
def test_gradient_bound(seed, beta):
    m = build_model("rem", 5)
    assert gradient_norm_sq(m, sample_environment(m, seed), beta) <= beta**2 / m.n + 1e-12


def test_time_average_beta_zero_constant():
    m = build_model("rem", 6)
    ta = time_averaged_overlap(m, 0.0, 4.0, 20, 1)
    assert np.allclose(ta.per_replica, 2**-6)


def test_time_average_degenerate_interval():
    m = build_model("rem", 8)
    ta = time_averaged_overlap(m, 1.5, 0.0, 300, 5)
    plain = np.mean([ExactGibbs(m, sample_environment(m, 5, r), 1.5).mean_overlap for r in range(300)])
    assert ta.ci[0] <= plain <= ta.ci[1]
    assert plain == pytest.approx(ta.value, abs=1e-12)


def test_time_average_gap_shrinks():
    m = build_model("rem", 14)
    gaps = [time_averaged_overlap(m, 2.0, T, 200, 20240105).gap for T in (2.0, 4.0, 8.0)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_kappa_reference():
    m = build_model("rem", 8)
    assert kappa_reference(m, 2.5)[0] == pytest.approx(rem_limit_mean_overlap(2.5))
    p = build_model("pspin", 5)
    k, label = kappa_reference(p, 1.0, 0.7)
    assert label == "surrogate" and k == pytest.approx(0.3)
    with pytest.raises(ValueError):
        kappa_reference(p, 1.0)


def test_perturb_k_zero_and_variance():
    base = big_env(3)
    assert np.array_equal(perturb(PerturbationStack(base, [], 4)).g, base.g)
    m_n = 6
    stack = PerturbationStack(base, [big_env(10 + j) for j in range(m_n)], m_n)
    g = perturb(stack).g
    se = math.sqrt(2.0 / BIG) * 2.0
    assert abs(g.var(ddof=1) - 2.0) <= 3 * se


def test_perturbation_stack_deterministic():
    m = build_model("rem", 5)
    base = sample_environment(m, 1)
    a = perturb(perturbation_stack(m, base, 3, 9, 2)).g
    b = perturb(perturbation_stack(m, base, 3, 9, 2)).g
    assert np.array_equal(a, b)


def test_temperature_equivalence_k_zero():
    rep = temperature_equivalence_test(build_model("rem", 6), 1.0, 0, 500, 3)
    assert rep.beta_equivalent == 1.0
    assert rep.p_free_energy > 0.001


def test_inclusion_factor_zero_perturbation(small_model):
    env = sample_environment(small_model, 4)
    zero = Environment(np.zeros(small_model.feature_count))
    assert inclusion_factor(small_model, env, zero, 1.3) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_inclusion_holds_on_polymer_instances():
    m = build_model("polymer", 6, {"d": 1})
    for r in range(100):
        env = sample_environment(m, 500, r)
        h = Environment(np.random.default_rng(r).standard_normal(m.feature_count))
        for delta in (0.2, 0.35):
            holds, margin = check_inclusion(m, env, h, 1.0, delta)
            assert holds, (r, delta, margin)


@pytest.mark.parametrize("beta", [0.1, 1.0])
def test_inclusion_tail_bound(beta):
    m = build_model("rem", 6)
    delta = 0.01
    gen = np.random.default_rng(17)
    hits = 0
    for _ in range(2000):
        env = Environment(gen.standard_normal(m.feature_count))
        h = Environment(gen.standard_normal(m.feature_count))
        hits += inclusion_factor(m, env, h, beta) > delta**-0.25
    assert hits / 2000 <= 4 * math.exp(32 * beta**2) * delta


def test_h_variance_identity_monte_carlo():
    m = build_model("rem", 6)
    g = ExactGibbs(m, sample_environment(m, 2), 1.0)
    f = np.random.default_rng(0).uniform(0, 1, g.probs.size)
    t = 0.6
    gen = np.random.default_rng(1)
    hs = gen.standard_normal((40_000, m.feature_count))
    hh = math.sqrt(m.n) * hs  # REM energies of h
    vals = np.exp(t / math.sqrt(m.n) * hh) @ (g.probs * f)
    want = h_variance_exact(g, f, t)
    # SE of a sample variance from its fourth central moment
    c = vals - vals.mean()
    se = math.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / vals.size)
    assert abs(vals.var(ddof=1) - want) <= 4 * se
    assert abs(vals.mean() - math.exp(t * t / 2) * g.probs @ f) <= 4 * vals.std() / math.sqrt(vals.size)


@given(st.integers(0, 500), st.floats(0.0, 2.0), st.floats(0.0, 1.5))
def test_h_variance_bounds(seed, beta, t):
    for kind, params in (("rem", None), ("polymer", {"d": 1})):
        m = build_model(kind, 5, params)
        g = ExactGibbs(m, sample_environment(m, seed), beta)
        gen = np.random.default_rng(seed)
        f01 = gen.uniform(0, 1, g.probs.size)
        fl2 = gen.normal(0, 2, g.probs.size)
        exact01 = h_variance_exact(g, f01, t)
        a, b = h_variance_bounds(g, f01, t)
        assert exact01 >= -1e-12
        assert exact01 <= a * (1 + 1e-9) + 1e-12 and exact01 <= b * (1 + 1e-9) + 1e-12
        a2, _ = h_variance_bounds(g, fl2, t)
        assert h_variance_exact(g, fl2, t) <= a2 * (1 + 1e-9) + 1e-12
