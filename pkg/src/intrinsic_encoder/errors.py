"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ToolkitError, ValueError):
    """A configuration value violates its invariants."""


class ShapeError(ToolkitError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class DataError(ToolkitError, ValueError):
    """A dataset, file, or lookup is malformed or missing."""


class NumericError(ToolkitError, ArithmeticError):
    """A value left its mathematical domain (non-finite loss, bad probability)."""


class CheckpointError(ToolkitError, RuntimeError):
    """A checkpoint file is missing, corrupt, or incompatible."""
