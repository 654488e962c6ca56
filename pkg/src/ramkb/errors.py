"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class RamError(Exception):
    pass


class ConfigError(RamError):
    """Invalid configuration: bad mode, bad hyperparameter, shape mismatch."""


class DataError(RamError):
    """Invalid or missing dataset input."""


class ParseError(DataError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DimensionError(ConfigError, ValueError):
    """Operands with incompatible shapes."""


class NumericError(RamError):
    """Non-finite values encountered during training."""
