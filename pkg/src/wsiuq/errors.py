"""Exception hierarchy shared by every subpackage."""


class WsiuqError(Exception):
    """Base class for all errors raised by wsiuq."""


class ShapeError(WsiuqError, ValueError):
    """Input arrays have incompatible shapes."""


class DomainError(WsiuqError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class NumericError(WsiuqError, ArithmeticError):
    """A computation produced a non-finite value."""


class NumericDivergenceError(NumericError):
    """Training loss became NaN or infinite."""


class ConfigError(WsiuqError, ValueError):
    """An experiment or method configuration is invalid."""


class DataError(WsiuqError, ValueError):
    """An input file is malformed. ``line`` is 1-based when known."""

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
