"""Exception hierarchy shared by every module."""


class IckError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(IckError, ValueError):
    pass


class NotPositiveDefinite(IckError, ArithmeticError):
    pass


class SingularFactor(IckError, ArithmeticError):
    pass


class NoConvergence(IckError, ArithmeticError):
    pass


class UnsupportedSpectrum(IckError, NotImplementedError):
    pass


class UnsupportedActivation(IckError, NotImplementedError):
    pass


class MissingSource(IckError, KeyError):
    pass


class NonFiniteLoss(IckError, FloatingPointError):
    def __init__(self, message, batch_index=None, epoch=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.epoch = epoch


class EmptyEnsemble(IckError, ValueError):
    pass


class DegenerateInput(IckError, ValueError):
    pass


class ConfigError(IckError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DataError(IckError):
    pass


class IoError(DataError, OSError):
    pass


class SchemaError(DataError, ValueError):
    pass


class ParseError(DataError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column
