"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class TrustnetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TrustnetError):
    """Invalid experiment configuration (bad flag value, impossible variant)."""


class DataError(TrustnetError):
    """Unreadable or malformed input data."""


class ParseError(DataError):
    """Malformed line in a dataset file; message carries the line number."""


class NumericalError(TrustnetError):
    """A non-finite value appeared where the pipeline requires finite numbers."""
