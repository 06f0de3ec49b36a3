"""Model-agnostic pieces: model descriptions, environments, state encodings,
feature maps, Hamiltonians and overlaps.

Every built-in model is written as ``H(sigma) = sum_i g_i * phi_i(sigma)`` with a
finite, dense feature index range.  The per-kind arithmetic lives on the
parameter objects in :mod:`gaussloc.models`; the functions here dispatch to them
and enforce the shared contracts (normalisation, dimensions, encodings).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Hashable

import numpy as np

StateId = Hashable
"""Canonical state: ``int`` bitmask for spin models, tuple of step indices for paths."""


class ModelKind(str, enum.Enum):
    REM = "rem"
    MIXED_PSPIN = "pspin"
    DIRECTED_POLYMER = "polymer"


class EncodingError(ValueError):
    """A state does not decode to a valid configuration of the model."""


class DimensionMismatch(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    """Instance too large for exact computation; use the sampling module instead."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """A disordered model of size ``n``.

    ``params`` is one of the parameter objects from :mod:`gaussloc.models`
    (``RemParams``, ``MixedXi``, ``PolymerParams``); it fixes the feature layout.
    """

    kind: ModelKind
    n: int
    params: Any
    nonneg_correlation_slack: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if self.nonneg_correlation_slack < 0:
            raise ValueError("nonneg_correlation_slack must be >= 0")

    @property
    def feature_count(self) -> int:
        return self.params.feature_count(self.n)

    @property
    def is_spin(self) -> bool:
        return self.kind in (ModelKind.REM, ModelKind.MIXED_PSPIN)


@dataclass(frozen=True, eq=False)
class Environment:
    """Disorder vector in the model's feature index space."""

    g: np.ndarray
    seed: int | None = None
    replica_id: int = 0

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(g)):
            raise ValueError("environment entries must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def replace(self, g: np.ndarray) -> "Environment":
        return Environment(g, seed=self.seed, replica_id=self.replica_id)


@dataclass(frozen=True)
class GibbsSummary:
    beta: float
    log_z: float
    free_energy: float
    free_energy_derivative: float
    free_energy_second_derivative: float
    mean_overlap: float


def check_environment(model: ModelSpec, env: Environment) -> None:
    if env.dim != model.feature_count:
        raise DimensionMismatch(
            f"environment has dimension {env.dim}, model expects {model.feature_count}"
        )


def validate_state(model: ModelSpec, sigma: StateId) -> StateId:
    """Return the canonical form of ``sigma`` or raise :class:`EncodingError`."""
    return model.params.validate_state(model.n, sigma)


def feature_vector(model: ModelSpec, sigma: StateId) -> np.ndarray:
    sigma = validate_state(model, sigma)
    return model.params.feature_vector(model.n, sigma)


def hamiltonian(model: ModelSpec, env: Environment, sigma: StateId) -> float:
    check_environment(model, env)
    sigma = validate_state(model, sigma)
    return float(model.params.energy(model.n, env.g, sigma))


def overlap(model: ModelSpec, sigma1: StateId, sigma2: StateId) -> float:
    """Normalised covariance ``Cov(H(s1), H(s2)) / n`` in closed form."""
    s1 = validate_state(model, sigma1)
    s2 = validate_state(model, sigma2)
    return float(model.params.overlap(model.n, s1, s2))


def metric_rho(model: ModelSpec, sigma1: StateId, sigma2: StateId) -> float:
    return 1.0 - overlap(model, sigma1, sigma2)


def encode_state(model: ModelSpec, sigma: StateId) -> str:
    return model.params.encode(model.n, validate_state(model, sigma))


def decode_state(model: ModelSpec, text: str) -> StateId:
    return validate_state(model, model.params.decode(model.n, text))


def random_state(model: ModelSpec, rng: np.random.Generator) -> StateId:
    """Uniform draw from the reference measure (a path for polymers)."""
    return model.params.random_state(model.n, rng)
