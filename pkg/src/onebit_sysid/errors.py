"""Exception hierarchy shared by all modules."""


class OnebitSysidError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OnebitSysidError, ValueError):
    """A precondition on user-supplied data or configuration is violated."""


class UnstablePolynomial(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class NonFiniteInput(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class InsufficientHorizon(InsufficientData):
    pass


class NotPositiveDefinite(ValidationError):
    """Raised when an excitation or covariance matrix fails the PD check.

    For an excitation matrix this means the input is not persistently exciting.
    """


class ConfigMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
