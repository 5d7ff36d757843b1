"""Relational mixtures of Hawkes processes with meta-learned per-subject models."""
from . import _backend
from .errors import (
    DomainError,
    NumericError,
    NumericWarning,
    SupercriticalError,
    ValidationError,
)
from .meta_adaptation import AdaptationConfig, Variant
from .point_process import EventSequence, HawkesParams
from .relational_vi import ModelParams, RelationalGraph, VariationalState
from .trainer import FitResult, TrainConfig, fit, fit_stochastic, fit_two_step

__version__ = "0.1.0"


def backend() -> str:
    """Name of the active kernel implementation (``"cython"`` or ``"python"``)."""
    return _backend.BACKEND


set_backend = _backend.set_backend

__all__ = [
    "AdaptationConfig", "DomainError", "EventSequence", "FitResult", "HawkesParams",
    "ModelParams", "NumericError", "NumericWarning", "RelationalGraph",
    "SupercriticalError", "TrainConfig", "ValidationError", "Variant",
    "VariationalState", "backend", "fit", "fit_stochastic", "fit_two_step", "set_backend",
]
