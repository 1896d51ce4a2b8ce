"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and plain
I/O errors -> 3, NumericError -> 4.
"""


class TrajkitError(Exception):
    pass


class ShapeError(TrajkitError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(TrajkitError):
    """A configuration value is invalid or inconsistent."""


class VocabError(TrajkitError):
    """A token or node name is outside the known vocabulary."""


class DataError(TrajkitError):
    """A data file is malformed. Carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class NumericError(TrajkitError):
    """Non-finite values, domain violations, or degenerate numeric state."""
