import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gaussloc.core import PreconditionError, overlap
from gaussloc.diagnostics import (
    a_delta_mass,
    a_delta_mass_sampled,
    b_delta_indicator,
    ball_cover,
    coverage_of,
    covered_mask,
    draw_distinct_centers,
    extract_orthogonal,
    gram_min_eigenvalue,
    localization_report,
    min_pair_count,
    pair_in_ball,
)
from gaussloc.exact import ExactGibbs
from gaussloc.models import build_model, sample_environment
from gaussloc.sampling import SamplerConfig, sample_states

from oracles import BruteGibbs


def gibbs(kind, n, params, beta, seed=0):
    m = build_model(kind, n, params)
    return ExactGibbs(m, sample_environment(m, seed), beta)


def test_a_delta_rem_beta_zero():
    g = gibbs("rem", 6, None, 0.0)
    assert a_delta_mass(g, 2**-6) == pytest.approx(1.0)
    assert a_delta_mass(g, 0.5) == pytest.approx(1.0)
    assert a_delta_mass(g, 2**-7) == 0.0


def test_a_delta_polymer_matches_enumeration():
    g = gibbs("polymer", 6, {"d": 1}, 1.2, seed=3)
    b = BruteGibbs(g.model, g.env, 1.2)
    for delta in (0.05, 0.1, 0.2, 0.3, 0.5):
        assert a_delta_mass(g, delta) == pytest.approx(b.p[b.conditional <= delta].sum(), abs=1e-12)


def test_a_delta_monotone_in_delta(small_model):
    g = ExactGibbs(small_model, sample_environment(small_model, 1), 1.5)
    masses = [a_delta_mass(g, d) for d in np.linspace(0, 1, 21)]
    assert all(a <= b for a, b in zip(masses, masses[1:]))
    assert masses[-1] == pytest.approx(1.0)


def test_a_delta_sampled_consistent():
    g = gibbs("polymer", 5, {"d": 1}, 1.0, seed=2)
    samples = sample_states(g, SamplerConfig(1, 4000)).states
    est, se = a_delta_mass_sampled(g, samples, 0.3)
    assert abs(est - a_delta_mass(g, 0.3)) <= 4 * se + 1e-12


def test_b_delta_examples(small_model):
    g = ExactGibbs(small_model, sample_environment(small_model, 5), 0.8)
    assert b_delta_indicator(g, 1.0)
    assert not b_delta_indicator(g, 0.0)
    with pytest.raises(ValueError):
        b_delta_indicator(g, -0.1)


def test_b_delta_high_temperature_rem():
    m = build_model("rem", 12)
    hits = [b_delta_indicator(ExactGibbs(m, sample_environment(m, 77, r), 0.5), 0.01) for r in range(500)]
    assert np.mean(hits) >= 0.95


def test_ball_cover_beta_zero_singletons():
    g = gibbs("rem", 12, None, 0.0)
    rep = ball_cover(g, SamplerConfig(3, 1), 10, 0.5)
    assert rep.exact and rep.k == 10 and len(set(rep.centers)) == 10
    assert rep.covered_fraction == pytest.approx(10 * 2**-12, abs=1e-15)


def test_ball_cover_point_mass():
    g = gibbs("rem", 8, None, 50.0, seed=4)
    assert ball_cover(g, SamplerConfig(0, 1), 1, 0.5).covered_fraction >= 0.99


def test_ball_cover_monotone_in_k():
    g = gibbs("polymer", 6, {"d": 1}, 1.0, seed=6)
    centers = draw_distinct_centers(g, 12, seed=8)
    fracs = [coverage_of(g, centers[:k], 0.6) for k in range(1, 13)]
    assert all(a <= b + 1e-15 for a, b in zip(fracs, fracs[1:]))
    rep = ball_cover(g, SamplerConfig(8, 1), 5, 0.6)
    assert rep.centers == centers[:5]


def test_covered_mask_matches_direct_overlaps(small_model):
    g = ExactGibbs(small_model, sample_environment(small_model, 2), 1.0)
    states = g.states()
    centers = [states[0], states[len(states) // 3]]
    mask = covered_mask(g, centers, 0.4)
    want = [max(overlap(small_model, c, s) for c in centers) >= 0.4 for s in states]
    assert mask.tolist() == want


def test_ball_cover_sampled_fallback():
    g = gibbs("polymer", 22, {"d": 1}, 0.5)
    rep = ball_cover(g, SamplerConfig(1, 1), 3, 0.3, eval_samples=500)
    assert not rep.exact and 0 <= rep.covered_fraction <= 1 and rep.standard_error >= 0
    with pytest.raises(ValueError):
        ball_cover(g, SamplerConfig(1, 1), 3, 0.3)


def test_pair_in_ball_trivial_and_preconditions():
    m = build_model("polymer", 4, {"d": 1})
    s0 = (0, 0, 0, 0)
    assert pair_in_ball(m, [s0] * 3, s0, 1.0) == (0, 1)
    with pytest.raises(PreconditionError):
        pair_in_ball(m, [s0, (1, 1, 1, 1)], s0, 0.5)
    # below the guaranteed count the search may legitimately come back empty
    r = build_model("rem", 4)
    assert pair_in_ball(r, [0], 0, 0.5) is None


def test_min_pair_count():
    assert min_pair_count(0.5) == 9
    assert min_pair_count(1.0) == 3
    assert min_pair_count(0.3) == math.ceil(2 / 0.09) + 1


@pytest.mark.parametrize("delta", [0.3, 0.5, 0.8])
def test_pair_in_ball_randomized(delta):
    gen = np.random.default_rng(int(delta * 100))
    N = min_pair_count(delta)
    for trial in range(200):
        m = build_model("polymer", 10, {"d": 1})
        s0 = m.params.random_state(10, gen)
        family = []
        while len(family) < N:
            s = list(s0)
            for i in gen.choice(10, size=gen.integers(0, 10), replace=False):
                s[i] = int(gen.integers(0, 2))
            s = tuple(s)
            if overlap(m, s0, s) >= delta:
                family.append(s)
        assert pair_in_ball(m, family, s0, delta) is not None


@given(st.integers(0, 2**31 - 1), st.integers(2, 30))
def test_gram_is_psd(seed, k):
    gen = np.random.default_rng(seed)
    for kind, n, params in (("pspin", 6, {"xi": {2: math.sqrt(0.8), 3: math.sqrt(0.2)}}), ("polymer", 6, {"d": 2})):
        m = build_model(kind, n, params)
        states = [m.params.random_state(n, gen) for _ in range(k)]
        assert gram_min_eigenvalue(m, states) >= -1e-10


def test_extract_orthogonal_rem_beta_zero():
    g = gibbs("rem", 12, None, 0.0)
    out = extract_orthogonal(g, 0.5, 0.5, 4)
    assert len(set(out)) == 4
    assert extract_orthogonal(g, 0.5, 0.5, 1)[0] in range(4096)


def test_extract_orthogonal_polymer():
    g = gibbs("polymer", 8, {"d": 2}, 0.3, seed=1)
    eps1, eps2, N = 0.5, 0.9, 3
    out = extract_orthogonal(g, eps1, eps2, N)
    assert len(out) == N
    for i in range(N):
        assert g.conditional_overlap(out[i]) <= eps1 * eps2 / N
        for j in range(i):
            assert overlap(g.model, out[i], out[j]) < eps2


def test_extract_orthogonal_precondition():
    g = gibbs("rem", 6, None, 60.0, seed=2)
    with pytest.raises(PreconditionError):
        extract_orthogonal(g, 0.5, 0.5, 2)


def test_localization_report_fields():
    g = gibbs("rem", 6, None, 0.2)
    rep = localization_report(g, 0.5, 0.1)
    assert rep.a_delta_mass == pytest.approx(1.0) and rep.b_delta and rep.beta == 0.2
