"""Exception types shared across the package."""


class PyrafuseError(Exception):
    """Base class for all package errors."""


class ConfigError(PyrafuseError, ValueError):
    """Invalid configuration. Message lists every offending key/constraint."""


class DimensionError(PyrafuseError, ValueError):
    """Shape or contract violation in a numeric operation."""


class MalformedSpectrumError(PyrafuseError, ValueError):
    """Complex spectrum violates its structural invariants."""


class DataError(PyrafuseError, ValueError):
    """Dataset ingestion, splitting, or sampling problem."""


class CheckpointError(PyrafuseError, ValueError):
    """Checkpoint file problem."""


class MalformedCheckpointError(CheckpointError):
    """File is not a valid checkpoint (bad magic, truncated, corrupt manifest)."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint was written under a different model configuration."""


class NumericalError(PyrafuseError, ArithmeticError):
    """Non-finite values, divergence, or a singular affine transform."""
