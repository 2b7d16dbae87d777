"""Exception types raised across the package."""


class EmgError(Exception):
    """Base class for all package errors."""


class EmptyInput(EmgError, ValueError):
    pass


class ParseError(EmgError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySegmentation(EmgError, ValueError):
    pass


class UnknownFilter(EmgError, ValueError):
    pass


class BadLength(EmgError, ValueError):
    pass


class BadLevels(EmgError, ValueError):
    pass


class BadDecomposition(EmgError, ValueError):
    pass


class TooFewRows(EmgError, ValueError):
    pass


class BadInput(EmgError, ValueError):
    pass


class ShapeMismatch(EmgError, ValueError):
    pass


class EmptyBand(EmgError, ValueError):
    pass


class BadLabel(EmgError, ValueError):
    pass


class InvalidState(EmgError, RuntimeError):
    pass


class ModelFormatError(EmgError, ValueError):
    pass


class StratificationError(EmgError, ValueError):
    pass


class TrainingDiverged(EmgError, RuntimeError):
    """Raised when the training loss becomes non-finite.

    The partial learning curve is kept on ``self.curve`` for inspection.
    """

    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class StageError(EmgError, RuntimeError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
