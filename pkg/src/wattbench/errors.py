"""Error types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific one that applies.
"""


class WattbenchError(Exception):
    """Base class for all package errors."""


class ConfigError(WattbenchError):
    """Invalid configuration or experiment specification."""


class DatasetError(WattbenchError):
    """Unreadable, malformed, or degenerate input data."""
