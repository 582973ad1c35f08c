"""Exception hierarchy shared by all modules."""


class ErgoHrcError(Exception):
    """Base class for package errors."""


class ValidationError(ErgoHrcError, ValueError):
    """Input data violates a documented invariant or precondition."""


class ParseError(ValidationError):
    """A text document could not be parsed.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatagramError(ErgoHrcError):
    """A UDP payload was rejected by the transport layer."""
