"""Exception taxonomy shared across the package.

The CLI maps these onto distinct process exit codes, so library code
should raise the most specific class that applies.
"""


class DiffrankError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DiffrankError):
    """Bad run configuration: unknown key, wrong type, invalid value."""


class DataError(DiffrankError):
    """Problem with input data files or caches."""


class ParseError(DataError):
    """Malformed line in a ranking data file. Carries file and line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)


class ValidationError(DataError):
    """Parsed value violates the data contract (e.g. label out of range)."""


class CacheCorruptionError(DataError):
    """Binary cache is truncated or internally inconsistent."""


class IncompatibilityError(DiffrankError):
    """Versioned artifact does not match what the reader expects."""


class ShapeError(DiffrankError):
    """Tensor operands have incompatible shapes."""


class DomainError(DiffrankError):
    """Math op applied outside its domain (log of a non-positive value)."""


class NumericError(DiffrankError):
    """Non-finite value where training or inference cannot continue."""
