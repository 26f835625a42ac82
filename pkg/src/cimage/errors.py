"""Exception types raised across the package."""


class CimageError(Exception):
    """Base class for all package errors."""


class FileMissing(CimageError, FileNotFoundError):
    pass


class MalformedInput(CimageError, ValueError):
    """A dataset file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class InsufficientNonEdges(CimageError, ValueError):
    pass


class EmptyTestSplit(CimageError, ValueError):
    pass


class NonFiniteError(CimageError, FloatingPointError):
    pass


class ShapeError(CimageError, ValueError):
    pass


class InsufficientLabeled(CimageError, ValueError):
    pass


class SingularSystem(CimageError, ArithmeticError):
    pass


class DegeneratePartition(CimageError, ValueError):
    pass


class EmptyContext(CimageError, ValueError):
    """One of the two factor contexts came out empty.

    ``which`` is ``"F1"`` (nothing scored nonzero, lower beta) or ``"F2"``
    (everything scored nonzero, raise beta).
    """

    def __init__(self, which):
        super().__init__(f"context {which} is empty")
        self.which = which
