"""Concrete models: the random energy model, mixed p-spin Ising glasses and
directed polymers on Z^d, plus the REM limiting free energy.

Feature layouts (all dense integer ranges):

* REM: one feature per state, ``phi_s(sigma) = sqrt(n) * [s == sigma]``.
* mixed p-spin: blocks for each active ``p`` in increasing order; inside a block
  the tuple ``(i_1, ..., i_p)`` is flattened in C order and
  ``phi = beta_p * n**(-(p-1)/2) * sigma_{i_1} ... sigma_{i_p}``.
* polymer: ``(time, site)`` with time ``1..n`` and sites in the cube
  ``|x|_inf <= n * max|step|``, flattened as ``(i - 1) * box + site``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import rng as rng_streams
from .core import EncodingError, Environment, ModelKind, ModelSpec, BudgetExceeded

log = logging.getLogger(__name__)

BETA_C = math.sqrt(2.0 * math.log(2.0))
MAX_P = 3


def spins_from_mask(mask: int, n: int) -> np.ndarray:
    """Bit ``i`` set means spin ``i`` is +1."""
    return np.where((mask >> np.arange(n)) & 1, 1.0, -1.0)


def spin_table(n: int) -> np.ndarray:
    """All ``2**n`` spin vectors, row ``m`` decoding bitmask ``m``."""
    masks = np.arange(1 << n, dtype=np.int64)
    return np.where((masks[:, None] >> np.arange(n)) & 1, 1.0, -1.0)


class _SpinStates:
    """State handling shared by the two hypercube models."""

    def validate_state(self, n, sigma):
        if isinstance(sigma, (bool, np.bool_)) or not isinstance(sigma, (int, np.integer)):
            raise EncodingError(f"spin state must be an integer bitmask, got {sigma!r}")
        sigma = int(sigma)
        if not 0 <= sigma < (1 << n):
            raise EncodingError(f"bitmask {sigma} out of range for n={n}")
        return sigma

    def encode(self, n, sigma):
        return "".join("1" if (sigma >> i) & 1 else "0" for i in range(n))

    def decode(self, n, text):
        if len(text) != n or set(text) - {"0", "1"}:
            raise EncodingError(f"expected a bitstring of length {n}, got {text!r}")
        return sum(1 << i for i, c in enumerate(text) if c == "1")

    def random_state(self, n, rng):
        return int(rng.integers(0, 1 << n))


@dataclass(frozen=True)
class RemParams(_SpinStates):
    kind = ModelKind.REM

    def feature_count(self, n):
        return 1 << n

    def feature_vector(self, n, sigma):
        phi = np.zeros(1 << n)
        phi[sigma] = math.sqrt(n)
        return phi

    def energy(self, n, g, sigma):
        return math.sqrt(n) * g[sigma]

    def energies(self, n, g):
        return math.sqrt(n) * np.asarray(g)

    def overlap(self, n, s1, s2):
        return 1.0 if s1 == s2 else 0.0


@dataclass(frozen=True)
class MixedXi(_SpinStates):
    """Mixture ``xi(q) = sum_p beta_p**2 q**p`` with ``xi(1) = 1``.

    Coefficients are renormalised (with a warning) when the squares do not sum
    to one.  Odd ``p`` are accepted only if ``xi >= 0`` on ``[-1, 1]``.
    """

    coefficients: tuple[tuple[int, float], ...]

    kind = ModelKind.MIXED_PSPIN

    def __post_init__(self):
        coeffs: dict[int, float] = {}
        for p, b in self.coefficients:
            p = int(p)
            if p < 2:
                raise ValueError(f"p-spin orders must be >= 2, got {p}")
            coeffs[p] = coeffs.get(p, 0.0) + float(b) ** 2
        coeffs = {p: s for p, s in coeffs.items() if s > 0}
        if not coeffs:
            raise ValueError("xi needs at least one nonzero coefficient")
        total = sum(coeffs.values())
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-12):
            log.warning("xi(1) = %.6g; renormalising coefficients so that xi(1) = 1", total)
        norm = tuple((p, math.sqrt(coeffs[p] / total)) for p in sorted(coeffs))
        object.__setattr__(self, "coefficients", norm)
        grid = np.linspace(-1.0, 1.0, 2001)
        if np.min(self.xi(grid)) < -1e-12:
            raise ValueError("xi takes negative values on [-1, 1]; odd orders rejected")

    @classmethod
    def from_mapping(cls, coeffs: Mapping[int, float]) -> "MixedXi":
        return cls(tuple((int(p), float(b)) for p, b in coeffs.items()))

    @property
    def max_p(self) -> int:
        return max(p for p, _ in self.coefficients)

    def xi(self, q):
        q = np.asarray(q, dtype=float)
        return sum(b * b * q**p for p, b in self.coefficients)

    def feature_count(self, n):
        return sum(n**p for p, _ in self.coefficients)

    def blocks(self, n):
        """Yield ``(p, scale, slice)`` for each order's block of features."""
        start = 0
        for p, b in self.coefficients:
            size = n**p
            yield p, b / n ** ((p - 1) / 2), slice(start, start + size)
            start += size

    def coupling_tensors(self, n, g):
        """Scaled coupling tensors ``[(p, scale * G_p)]`` reshaped to ``(n,)*p``."""
        g = np.asarray(g)
        return [(p, c * g[sl].reshape((n,) * p)) for p, c, sl in self.blocks(n)]

    def feature_vector(self, n, sigma):
        s = spins_from_mask(sigma, n)
        parts = []
        for p, c, _ in self.blocks(n):
            t = s
            for _ in range(p - 1):
                t = np.multiply.outer(t, s)
            parts.append(c * t.reshape(-1))
        return np.concatenate(parts)

    def energy(self, n, g, sigma):
        s = spins_from_mask(sigma, n)
        return float(tensor_energies(self.coupling_tensors(n, g), s[None, :])[0])

    def overlap(self, n, s1, s2):
        if s1 == s2:
            return 1.0  # xi(1) = 1 up to rounding of the renormalised weights
        q = float(spins_from_mask(s1, n) @ spins_from_mask(s2, n)) / n
        return float(self.xi(q))


def tensor_energies(tensors, spins: np.ndarray) -> np.ndarray:
    """Energies of a batch of spin rows ``(m, n)`` under scaled coupling tensors."""
    out = np.zeros(spins.shape[0])
    for p, a in tensors:
        if p == 2:
            out += np.einsum("mi,ij,mj->m", spins, a, spins, optimize=True)
        elif p == 3:
            out += np.einsum("mi,mj,mk,ijk->m", spins, spins, spins, a, optimize=True)
        else:
            raise NotImplementedError(f"p = {p} couplings")
    return out


_LETTERS = "EWNSUD"


@dataclass(frozen=True)
class WalkKernel:
    """Finite-support step distribution on Z^d."""

    steps: tuple[tuple[int, ...], ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.steps) == 0 or len(self.steps) != len(self.probs):
            raise ValueError("kernel needs matching, non-empty steps and probs")
        d = len(self.steps[0])
        if any(len(s) != d for s in self.steps):
            raise ValueError("all steps must have the same dimension")
        if len(set(self.steps)) != len(self.steps):
            raise ValueError("duplicate steps in kernel")
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("kernel probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "steps", tuple(tuple(int(c) for c in s) for s in self.steps))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @classmethod
    def simple(cls, d: int) -> "WalkKernel":
        """Simple random walk; steps ordered +e1, -e1, +e2, -e2, ..."""
        steps = []
        for axis in range(d):
            for sign in (1, -1):
                e = [0] * d
                e[axis] = sign
                steps.append(tuple(e))
        return cls(tuple(steps), tuple([1.0 / (2 * d)] * (2 * d)))

    @property
    def d(self) -> int:
        return len(self.steps[0])

    @property
    def is_simple(self) -> bool:
        return self == WalkKernel.simple(self.d)

    @property
    def max_abs_step(self) -> int:
        return max(max(abs(c) for c in s) for s in self.steps)

    @property
    def step_array(self) -> np.ndarray:
        return np.asarray(self.steps, dtype=np.int64)

    @property
    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.probs))


@dataclass(frozen=True)
class PolymerParams:
    """Directed polymer with reference walk ``kernel``; ``endpoint`` pins sigma(n)."""

    kernel: WalkKernel
    endpoint: tuple[int, ...] | None = None

    kind = ModelKind.DIRECTED_POLYMER

    def __post_init__(self):
        if self.kernel.d not in (1, 2, 3):
            raise ValueError(f"lattice dimension must be 1, 2 or 3, got {self.kernel.d}")
        if self.endpoint is not None:
            ep = tuple(int(c) for c in self.endpoint)
            if len(ep) != self.kernel.d:
                raise ValueError("endpoint dimension does not match kernel")
            object.__setattr__(self, "endpoint", ep)

    @property
    def d(self):
        return self.kernel.d

    def radius(self, n):
        return n * self.kernel.max_abs_step

    def side(self, n):
        return 2 * self.radius(n) + 1

    def box_size(self, n):
        return self.side(n) ** self.d

    def box_shape(self, n):
        return (self.side(n),) * self.d

    def feature_count(self, n):
        return n * self.box_size(n)

    def strides(self, n):
        side = self.side(n)
        return np.array([side ** (self.d - 1 - k) for k in range(self.d)], dtype=np.int64)

    def origin_site(self, n):
        return int(self.radius(n) * self.strides(n).sum())

    def step_offsets(self, n):
        """Flat site offset of each kernel step."""
        return self.kernel.step_array @ self.strides(n)

    def site_of(self, n, pos):
        pos = np.asarray(pos, dtype=np.int64)
        return (pos + self.radius(n)) @ self.strides(n)

    def endpoint_site(self, n):
        if self.endpoint is None:
            return None
        if max(abs(c) for c in self.endpoint) > self.radius(n):
            raise ValueError("endpoint lies outside the reachable box")
        return int(self.site_of(n, self.endpoint))

    def positions(self, n, sigma):
        """Positions ``x_1..x_n`` as an ``(n, d)`` integer array."""
        return np.cumsum(self.kernel.step_array[list(sigma)], axis=0)

    def sites(self, n, sigma):
        return self.origin_site(n) + np.cumsum(self.step_offsets(n)[list(sigma)])

    def validate_state(self, n, sigma):
        try:
            sigma = tuple(int(s) for s in sigma)
        except TypeError:
            raise EncodingError(f"path state must be a sequence of step indices, got {sigma!r}")
        if len(sigma) != n:
            raise EncodingError(f"path must have {n} steps, got {len(sigma)}")
        k = len(self.kernel.steps)
        if any(s < 0 or s >= k or self.kernel.probs[s] == 0 for s in sigma):
            raise EncodingError(f"path uses a step outside the kernel support: {sigma}")
        if self.endpoint is not None:
            if tuple(self.positions(n, sigma)[-1]) != self.endpoint:
                raise EncodingError("path does not end at the pinned endpoint")
        return sigma

    def feature_vector(self, n, sigma):
        phi = np.zeros(self.feature_count(n))
        phi[np.arange(n) * self.box_size(n) + self.sites(n, sigma)] = 1.0
        return phi

    def energy(self, n, g, sigma):
        idx = np.arange(n) * self.box_size(n) + self.sites(n, sigma)
        return float(np.asarray(g)[idx].sum())

    def overlap(self, n, s1, s2):
        return float(np.mean(self.sites(n, s1) == self.sites(n, s2)))

    def encode(self, n, sigma):
        if self.kernel.is_simple:
            return "".join(_LETTERS[s] for s in sigma)
        return ".".join(str(s) for s in sigma)

    def decode(self, n, text):
        if self.kernel.is_simple:
            allowed = _LETTERS[: 2 * self.d]
            if any(c not in allowed for c in text):
                raise EncodingError(f"path letters must be drawn from {allowed!r}, got {text!r}")
            return tuple(allowed.index(c) for c in text)
        try:
            return tuple(int(t) for t in text.split(".")) if text else ()
        except ValueError:
            raise EncodingError(f"cannot parse path {text!r}")

    def random_state(self, n, rng):
        k = len(self.kernel.steps)
        for _ in range(100000):
            sigma = tuple(int(s) for s in rng.choice(k, size=n, p=self.kernel.probs))
            if self.endpoint is None or tuple(self.positions(n, sigma)[-1]) == self.endpoint:
                return sigma
        raise RuntimeError("could not draw a path reaching the pinned endpoint")


def build_model(kind: ModelKind | str, n: int, params: Mapping | None = None) -> ModelSpec:
    """Build a model from a plain parameter block.

    * ``rem``: no parameters.
    * ``pspin``: ``xi`` mapping ``{p: beta_p}`` (default SK, ``{2: 1.0}``).
    * ``polymer``: ``d`` (default 1), optional ``kernel`` as ``{"steps": ..., "probs": ...}``,
      optional ``endpoint``.
    """
    kind = ModelKind(kind)
    params = dict(params or {})
    if kind is ModelKind.REM:
        if params:
            raise ValueError(f"REM takes no parameters, got {sorted(params)}")
        return ModelSpec(kind, n, RemParams())
    if kind is ModelKind.MIXED_PSPIN:
        xi = params.pop("xi", {2: 1.0})
        if params:
            raise ValueError(f"unknown p-spin parameters {sorted(params)}")
        mix = xi if isinstance(xi, MixedXi) else MixedXi.from_mapping(xi)
        if mix.max_p > MAX_P:
            raise BudgetExceeded(f"p = {mix.max_p} exceeds the enumeration budget (max p = {MAX_P})")
        return ModelSpec(kind, n, mix)
    d = int(params.pop("d", 1))
    kernel = params.pop("kernel", None)
    endpoint = params.pop("endpoint", None)
    if params:
        raise ValueError(f"unknown polymer parameters {sorted(params)}")
    if d not in (1, 2, 3):
        raise ValueError(f"lattice dimension must be 1, 2 or 3, got {d}")
    if kernel is None:
        kernel = WalkKernel.simple(d)
    elif not isinstance(kernel, WalkKernel):
        kernel = WalkKernel(tuple(map(tuple, kernel["steps"])), tuple(kernel["probs"]))
    if kernel.d != d:
        raise ValueError("kernel dimension does not match d")
    pp = PolymerParams(kernel, tuple(endpoint) if endpoint is not None else None)
    model = ModelSpec(kind, n, pp)
    pp.endpoint_site(n)
    return model


def sample_environment(model: ModelSpec, seed: int, replica_id: int = 0) -> Environment:
    """I.i.d. standard normal disorder, reproducible from ``(seed, replica_id)``."""
    gen = rng_streams.stream(seed, replica_id, rng_streams.ENVIRONMENT)
    return Environment(gen.standard_normal(model.feature_count), seed=seed, replica_id=replica_id)


def rem_limit_free_energy(beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if beta <= BETA_C:
        return beta * beta / 2.0
    return BETA_C**2 / 2.0 + (beta - BETA_C) * BETA_C


def rem_limit_derivative(beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return beta if beta <= BETA_C else BETA_C


def rem_limit_mean_overlap(beta: float) -> float:
    """Limit of the disorder-averaged mean overlap, ``1 - p'(beta)/beta``."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if beta == 0:
        return 0.0
    return 1.0 - rem_limit_derivative(beta) / beta


def all_paths(model: ModelSpec) -> np.ndarray:
    """Every admissible step sequence as an ``(count, n)`` array (small n only)."""
    pp: PolymerParams = model.params
    k = len(pp.kernel.steps)
    support = [s for s in range(k) if pp.kernel.probs[s] > 0]
    paths = np.array(list(itertools.product(support, repeat=model.n)), dtype=np.int64)
    if pp.endpoint is not None:
        ends = paths_sites(model, paths)[:, -1]
        paths = paths[ends == pp.endpoint_site(model.n)]
    return paths


def paths_sites(model: ModelSpec, paths: np.ndarray) -> np.ndarray:
    """Flat lattice sites visited at times ``1..n`` for each row of ``paths``."""
    pp: PolymerParams = model.params
    n = model.n
    offsets = pp.step_offsets(n)
    return pp.origin_site(n) + np.cumsum(offsets[np.asarray(paths)], axis=1)


def kernel_of(model: ModelSpec) -> WalkKernel:
    return model.params.kernel


def polymer_env_grid(model: ModelSpec, g: Sequence[float] | np.ndarray) -> np.ndarray:
    """Reshape a flat polymer environment to ``(n, side, ..., side)``."""
    pp: PolymerParams = model.params
    return np.asarray(g).reshape((model.n,) + pp.box_shape(model.n))
