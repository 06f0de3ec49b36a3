"""Gaussian disordered Gibbs measures: exact engines, samplers, environment
flows and localization diagnostics for small systems."""

from .core import (
    BudgetExceeded,
    DimensionMismatch,
    EncodingError,
    Environment,
    GibbsSummary,
    ModelKind,
    ModelSpec,
    PreconditionError,
    decode_state,
    encode_state,
    feature_vector,
    hamiltonian,
    metric_rho,
    overlap,
)
from .models import build_model, sample_environment

__version__ = "0.1.0"
