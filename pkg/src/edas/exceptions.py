"""Exception types shared across the package."""


class EdasError(Exception):
    """Base class for all package errors."""


class InvalidArgument(EdasError, ValueError):
    pass


class NumericalFailure(EdasError, ArithmeticError):
    """A loss or state became non-finite.

    ``where`` carries the epoch/iteration index when one is known.
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class ParseError(EdasError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(EdasError, ValueError):
    pass


class MissingArtifact(EdasError, FileNotFoundError):
    pass


class ConfigError(EdasError, ValueError):
    pass
