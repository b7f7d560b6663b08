"""Exception hierarchy shared across the package."""


class CurrilocError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVector(CurrilocError, ValueError):
    pass


class NonFinite(CurrilocError, ValueError):
    pass


class DimensionMismatch(CurrilocError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class InvalidShape(CurrilocError, ValueError):
    pass


class MissingParam(CurrilocError, ValueError):
    pass


class InvalidKind(CurrilocError, ValueError):
    pass


class StepOutOfRange(CurrilocError, ValueError):
    pass


class InsufficientRooms(CurrilocError, ValueError):
    pass


class NoPositiveAvailable(CurrilocError, ValueError):
    pass


class NoNegativeAvailable(CurrilocError, ValueError):
    pass


class TooFewImages(CurrilocError, ValueError):
    pass


class ConfigError(CurrilocError, ValueError):
    pass


class EmptyDataset(CurrilocError, ValueError):
    pass


class EmptyQuerySet(CurrilocError, ValueError):
    pass


class UnknownRoom(CurrilocError, KeyError):
    pass


class ColumnsOutOfRange(CurrilocError, ValueError):
    pass


class EvenKernel(CurrilocError, ValueError):
    pass


class ParseError(CurrilocError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingImage(CurrilocError, FileNotFoundError):
    pass


class FormatVersionError(CurrilocError, ValueError):
    pass


class InvalidFractions(CurrilocError, ValueError):
    pass
