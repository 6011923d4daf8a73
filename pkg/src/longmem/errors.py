"""Exception hierarchy shared across the package."""

from __future__ import annotations


class LongMemError(Exception):
    """Base class for all package errors."""


class DomainError(LongMemError, ValueError):
    """A parameter lies outside its admissible range."""


class EmbeddingFailure(LongMemError, ArithmeticError):
    """Circulant embedding produced significantly negative eigenvalues."""


class FactorizationFailure(LongMemError, ArithmeticError):
    """Covariance matrix is numerically not positive definite."""


class StabilityError(DomainError):
    """Explicit time-stepping scheme would be unstable (alpha * dt >= 1)."""


class DegenerateWindow(LongMemError, ValueError):
    """A window or filtered series has zero variation."""


class InsufficientData(LongMemError, ValueError):
    """Too few usable scales/samples for a regression."""


class EstimationFailure(LongMemError, ArithmeticError):
    """An estimator produced non-finite intermediate statistics."""


class ShapeError(LongMemError, ValueError):
    """Input shape is incompatible with a model or tape."""


class NonFiniteGradient(LongMemError, FloatingPointError):
    """A gradient contained NaN or Inf; the optimizer step was aborted."""


class CheckpointError(LongMemError, IOError):
    """Checkpoint file is corrupt, truncated, or inconsistent."""


class ConfigError(LongMemError, ValueError):
    """Invalid experiment or CLI configuration."""


class TrainingDiverged(LongMemError, RuntimeError):
    """Training produced non-finite gradients repeatedly."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
