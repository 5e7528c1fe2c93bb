"""Exception types shared across the package."""


class GriError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GriError, ValueError):
    """An argument violated a documented precondition."""


class NumericFaultError(GriError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ParseError(GriError, ValueError):
    """A file could not be parsed. Carries path and line number when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" ({path}" + (f", line {line}" if line is not None else "") + ")"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class DivergenceError(GriError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""
