"""Brute-force reference computations used only by the tests.

Everything here goes through explicit feature vectors and full state
enumeration, sharing no code path with the engines under test.
"""

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from gaussloc.core import feature_vector


def all_states(model):
    if model.is_spin:
        return list(range(1 << model.n))
    pp = model.params
    k = len(pp.kernel.steps)
    out = []
    for idx in itertools.product(range(k), repeat=model.n):
        try:
            out.append(pp.validate_state(model.n, idx))
        except ValueError:
            pass
    return out


def feature_matrix(model, states):
    return np.stack([feature_vector(model, s) for s in states])


def reference_log_weights(model, states):
    if model.is_spin:
        return np.full(len(states), -model.n * math.log(2.0))
    lk = model.params.kernel.log_probs
    lw = np.array([lk[list(s)].sum() for s in states])
    return lw - logsumexp(lw)


class BruteGibbs:
    """Gibbs quantities from explicit enumeration and double-replica sums."""

    def __init__(self, model, env, beta):
        self.model = model
        self.states = all_states(model)
        self.phi = feature_matrix(model, self.states)
        self.h = self.phi @ env.g
        lref = reference_log_weights(model, self.states)
        lw = beta * self.h + lref
        self.log_z = float(logsumexp(lw))
        self.p = np.exp(lw - self.log_z)
        self.R = self.phi @ self.phi.T / model.n
        n = model.n
        self.fprime = float(self.p @ self.h) / n
        self.fsecond = float(self.p @ self.h**2 - (self.p @ self.h) ** 2) / n
        self.mean_overlap = float(self.p @ self.R @ self.p)
        self.conditional = self.R @ self.p


def path_positions(d, n):
    """All (2d)^n nearest-neighbour paths as an ``(paths, n, d)`` position array."""
    unit = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    order = [k // 2 + (k % 2) * d for k in range(2 * d)]  # +e1, -e1, +e2, -e2, ...
    unit = unit[order]
    idx = np.array(list(itertools.product(range(2 * d), repeat=n)), dtype=np.int64).reshape(-1, n)
    return idx, np.cumsum(unit[idx], axis=1)


class BrutePolymer:
    """Simple-walk polymer quantities from enumerating every path.

    The environment is read as ``g[i - 1, x_1 + n, ..., x_d + n]``.
    """

    def __init__(self, d, n, g, beta):
        side = 2 * n + 1
        grid = np.asarray(g, dtype=float).reshape((n,) + (side,) * d)
        self.idx, pos = path_positions(d, n)
        flat = np.ravel_multi_index(tuple((pos + n)[..., k] for k in range(d)), (side,) * d)
        self.sites = flat
        self.h = grid.reshape(n, -1)[np.arange(n), flat].sum(axis=1)
        lw = beta * self.h
        self.log_z_unnormalised = float(logsumexp(lw))
        self.log_z = self.log_z_unnormalised - n * math.log(2 * d)
        self.p = np.exp(lw - self.log_z_unnormalised)
        self.marginals = np.zeros((n, side**d))
        for i in range(n):
            np.add.at(self.marginals[i], flat[:, i], self.p)
        self.mean_overlap = float((self.marginals**2).sum() / n)
        self.passage_time = float(self.h.max())
        self.max_atom = float(self.p.max())

    def double_replica_overlap(self):
        """``sum_{a,b} p_a p_b R(a, b)`` by explicit pairs (small instances only)."""
        same = (self.sites[:, None, :] == self.sites[None, :, :]).mean(axis=2)
        return float(self.p @ same @ self.p)
