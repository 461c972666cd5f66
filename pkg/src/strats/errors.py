"""Exception types shared across the package."""


class StratsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StratsError):
    """Invalid configuration or arguments, detected before any work is done."""


class DataError(StratsError):
    """Malformed input data (CSV rows, vocabularies, label files)."""


class ShapeError(StratsError):
    """Tensor shape mismatch in a numeric operation."""


class NonFiniteError(StratsError):
    """A forward operation produced NaN or Inf."""


class CheckpointError(StratsError):
    """Unreadable, corrupted, or mismatched checkpoint file."""
