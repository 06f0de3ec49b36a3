"""Fast invariant checks runnable without the test suite installed."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from ..atomicity import count_paths_by_turns, max_atom, passage_time, sample_site_grid
from ..core import feature_vector, overlap, random_state
from ..exact import ExactGibbs
from ..models import build_model, sample_environment
from .. import rng as rng_streams


def _normalization():
    gen = rng_streams.stream(1, 0, rng_streams.TRIALS)
    for kind, n, params in (("rem", 6, None), ("pspin", 5, {"xi": {2: 0.8**0.5, 3: 0.2**0.5}}), ("polymer", 5, {"d": 2})):
        m = build_model(kind, n, params)
        for _ in range(50):
            s = random_state(m, gen)
            phi = feature_vector(m, s)
            if abs(phi @ phi - n) > 1e-9 * n:
                return False
            t = random_state(m, gen)
            if abs(phi @ feature_vector(m, t) / n - overlap(m, s, t)) > 1e-12:
                return False
    return True


def _polymer_dp():
    m = build_model("polymer", 6, {"d": 1})
    env = sample_environment(m, 3)
    g = ExactGibbs(m, env, 1.1)
    lw = 1.1 * g.energies
    return abs(g.log_z - (logsumexp(lw) - 6 * math.log(2))) < 1e-9 and np.allclose(g.marginals.sum(axis=1), 1.0, atol=1e-10)


def _tower():
    m = build_model("pspin", 6, {})
    g = ExactGibbs(m, sample_environment(m, 4), 1.4)
    return abs(g.probs @ g.conditional_overlaps - g.mean_overlap) < 1e-9


def _turn_counts():
    for n in range(1, 8):
        for d in (1, 2):
            counts = [0] * n
            for idx in itertools.product(range(2 * d), repeat=n):
                counts[sum(a != b for a, b in zip(idx, idx[1:]))] += 1
            if counts != count_paths_by_turns(n, d):
                return False
    return True


def _passage():
    grid = sample_site_grid(1, 6, "gaussian", 5)
    best = -math.inf
    for idx in itertools.product((1, -1), repeat=6):
        pos = np.cumsum(idx)
        best = max(best, sum(grid[i, pos[i] + 6] for i in range(6)))
    ln, _ = passage_time(1, 6, grid)
    return abs(ln - best) < 1e-12 and 0 < max_atom(1, 6, grid, 1.0).max_atom <= 1


CHECKS = {
    "feature normalisation and overlap closed forms": _normalization,
    "polymer transfer matrix vs enumeration": _polymer_dp,
    "tower identity for conditional overlaps": _tower,
    "turn-count formula vs enumeration": _turn_counts,
    "passage-time DP vs enumeration": _passage,
}


def run_selftest() -> bool:
    ok = True
    for name, check in CHECKS.items():
        passed = bool(check())
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
