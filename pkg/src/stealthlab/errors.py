"""Exception hierarchy shared by every module."""


class StealthLabError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(StealthLabError, ValueError):
    pass


class NonConvergence(StealthLabError, ArithmeticError):
    pass


class NotSymmetric(StealthLabError, ValueError):
    pass


class NoisePDViolation(StealthLabError, ValueError):
    pass


class NotRightInvertible(StealthLabError):
    pass


class SingularCovariance(StealthLabError, ArithmeticError):
    pass


class UnstableClosedLoop(StealthLabError, ArithmeticError):
    pass


class NoBracket(StealthLabError, ArithmeticError):
    pass


class InsufficientSamples(StealthLabError, ValueError):
    pass


class ExponentUnfittable(StealthLabError):
    pass


class NumericOverflow(StealthLabError, ArithmeticError):
    """Raised when a simulated trajectory leaves the finite range.

    ``step`` is the zero-based time index of the first non-finite value.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ParseError(StealthLabError, ValueError):
    """Malformed model, matrix, or plan file, with a source location."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
