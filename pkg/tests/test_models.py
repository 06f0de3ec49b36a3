import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gaussloc.core import BudgetExceeded, Environment
from gaussloc.models import (
    BETA_C,
    MixedXi,
    WalkKernel,
    build_model,
    rem_limit_derivative,
    rem_limit_free_energy,
    rem_limit_mean_overlap,
    sample_environment,
)


def test_feature_counts():
    assert build_model("rem", 3).feature_count == 8
    assert build_model("polymer", 2, {"d": 1}).feature_count == 10
    assert build_model("pspin", 3, {"xi": {2: 1.0}}).feature_count == 9
    assert build_model("pspin", 3, {"xi": {2: 0.8**0.5, 3: 0.2**0.5}}).feature_count == 9 + 27
    assert build_model("polymer", 3, {"d": 2}).feature_count == 3 * 49


def test_build_model_errors():
    with pytest.raises(ValueError):
        build_model("polymer", 3, {"d": 4})
    with pytest.raises(ValueError):
        build_model("pspin", 3, {"xi": {3: 1.0}})  # odd p alone makes xi negative
    with pytest.raises(BudgetExceeded):
        build_model("pspin", 3, {"xi": {2: 0.9, 4: 0.1}})
    with pytest.raises(ValueError):
        build_model("rem", 3, {"xi": {2: 1.0}})


def test_xi_renormalised_with_warning(caplog):
    with caplog.at_level("WARNING"):
        xi = MixedXi.from_mapping({2: 2.0})
    assert "renormalising" in caplog.text
    assert xi.coefficients == ((2, 1.0),)
    assert math.isclose(float(xi.xi(1.0)), 1.0)


@given(st.floats(0.05, 1.0), st.floats(0.0, 0.5))
def test_xi_nonnegative_on_grid(b2, b3):
    xi = MixedXi.from_mapping({2: b2, 3: b3 * b2})
    assert np.min(xi.xi(np.linspace(-1, 1, 2001))) >= -1e-12
    assert math.isclose(float(xi.xi(1.0)), 1.0)


def test_simple_kernel():
    k = WalkKernel.simple(2)
    assert k.steps == ((1, 0), (-1, 0), (0, 1), (0, -1))
    assert all(p == 0.25 for p in k.probs)
    with pytest.raises(ValueError):
        WalkKernel(((1,), (-1,)), (0.7, 0.7))


def test_environment_determinism_and_streams():
    m = build_model("rem", 10)
    a = sample_environment(m, 99, 0)
    b = sample_environment(m, 99, 0)
    c = sample_environment(m, 99, 1)
    assert np.array_equal(a.g, b.g)
    assert not np.array_equal(a.g, c.g)
    assert isinstance(a, Environment) and a.dim == 1024


def test_environment_moments_1e6():
    m = build_model("polymer", 1000, {"d": 1})  # 1000 * 2001 features
    g = sample_environment(m, 7).g[:1_000_000]
    assert abs(g.mean()) <= 4 / math.sqrt(1e6)
    assert abs(g.var() - 1.0) <= 0.01


def test_rem_reference_examples():
    assert rem_limit_free_energy(0.0) == 0.0 and rem_limit_mean_overlap(0.0) == 0.0
    assert math.isclose(rem_limit_free_energy(BETA_C), math.log(2.0))
    assert abs(rem_limit_mean_overlap(BETA_C)) < 1e-15
    assert math.isclose(rem_limit_mean_overlap(2 * BETA_C), 0.5)
    with pytest.raises(ValueError):
        rem_limit_free_energy(-0.1)


def test_rem_reference_convex_continuous():
    betas = np.arange(0.0, 4.0 + 1e-9, 0.01)
    p = np.array([rem_limit_free_energy(b) for b in betas])
    assert np.all(np.diff(p, 2) >= -1e-12)
    assert np.max(np.abs(np.diff(p))) < 0.05
    dp = np.array([rem_limit_derivative(b) for b in betas])
    assert np.max(np.abs(np.diff(dp))) <= 0.01 + 1e-12


def test_pinned_endpoint_model():
    m = build_model("polymer", 4, {"d": 1, "endpoint": [0]})
    assert m.params.endpoint == (0,)
    with pytest.raises(ValueError):
        build_model("polymer", 2, {"d": 1, "endpoint": [5]})
