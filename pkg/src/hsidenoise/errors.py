"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError and usage
problems exit 1, DataError and ShapeError exit 2, NumericError exits 3.
"""


class ShapeError(ValueError):
    """An array had the wrong shape or rank for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class DataError(ValueError):
    """A file or payload failed validation (bad magic, truncation, range)."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""
