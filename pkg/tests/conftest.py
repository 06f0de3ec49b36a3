import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gaussloc.models import build_model

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, message); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_MODELS = [
    ("rem", 5, None),
    ("pspin", 5, {"xi": {2: 1.0}}),
    ("pspin", 4, {"xi": {2: math.sqrt(0.8), 3: math.sqrt(0.2)}}),
    ("polymer", 5, {"d": 1}),
    ("polymer", 3, {"d": 2}),
]


@pytest.fixture(params=SMALL_MODELS, ids=lambda p: f"{p[0]}-n{p[1]}-{p[2]}")
def small_model(request):
    kind, n, params = request.param
    return build_model(kind, n, params)
