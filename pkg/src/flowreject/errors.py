"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so keep the split coarse:
configuration problems, data problems, and numeric failures.
"""


class FlowRejectError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowRejectError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(FlowRejectError):
    """Invalid, corrupt, or mismatched data (exit code 3)."""


class NumericError(FlowRejectError):
    """Unrecoverable numeric failure during training or scoring (exit code 4)."""


class ShapeError(DataError):
    """Operand shapes do not conform to the requested operation."""
