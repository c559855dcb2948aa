"""Exception types shared across the package."""


class NnfdetError(Exception):
    """Base class for all package-specific errors."""


class FormatError(NnfdetError):
    """Unsupported or malformed image/file encoding."""


class InvalidArgumentError(NnfdetError, ValueError):
    """Caller passed an argument outside the documented domain."""


class OutOfBoundsError(NnfdetError, IndexError):
    """Rectangle or window does not fit inside the addressed grid."""


class ParseError(NnfdetError):
    """Malformed text input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(NnfdetError):
    """Training was asked to run without the samples it needs."""


class NoGroundTruthError(NnfdetError):
    """Evaluation requires at least one non-ignore annotation."""


class EmptyInputError(NnfdetError):
    """An aggregate operation received zero items."""


class DegeneratePlaneError(NnfdetError):
    """A plane without variation cannot be thresholded."""
