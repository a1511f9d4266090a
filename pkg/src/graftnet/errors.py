"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericFault -> 4. Contract violations inside library code raise plain
ValueError.
"""


class GraftNetError(Exception):
    """Base class for pipeline-level failures."""


class ConfigError(GraftNetError):
    """Invalid or unknown configuration key/value."""


class DataError(GraftNetError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A record could not be parsed; message carries file and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class IntegrityError(DataError):
    """A record references an id that does not resolve, or breaks an invariant."""


class NumericFault(GraftNetError):
    """NaN/Inf detected where finite numbers are required."""
