"""
Location: src/pathformer/utils/errors.py

Description: Exception hierarchy for Pathformer.

Every engine raises one of these so the CLI can turn failures into a single
diagnostic line and a nonzero exit code.
"""


class PathformerError(Exception):
    """Base class for all errors raised by the engine."""


class DimensionError(PathformerError, ValueError):
    """Raised when tensor shapes do not line up for an operation."""


class ConfigError(PathformerError, ValueError):
    """Raised when a configuration value or argument is out of range."""


class DataError(PathformerError, ValueError):
    """Raised for unusable input data (short splits, missing values, too few rows)."""


class ContractError(PathformerError):
    """Raised when a caller breaks an API contract (non-scalar loss, foreign checkpoint)."""


class TrainingError(PathformerError):
    """Raised when optimisation diverges."""
