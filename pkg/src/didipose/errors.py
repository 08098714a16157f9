"""Exception hierarchy shared by all subpackages.

The CLI maps the three top-level families to exit codes: ``ConfigError`` -> 2,
``DataError`` -> 3, ``DivergenceError`` -> 4.
"""


class DidiposeError(Exception):
    pass


class ConfigError(DidiposeError, ValueError):
    pass


class DataError(DidiposeError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", offset {offset})" if offset is not None else ")")
        super().__init__(message + where)


class SchemaError(DataError):
    pass


class DivergenceError(DidiposeError, FloatingPointError):
    pass


class ShapeError(DidiposeError, ValueError):
    pass


class NonFiniteError(DidiposeError, FloatingPointError):
    pass


class AlignmentError(DidiposeError, ValueError):
    """Procrustes fit is ill-posed (e.g. collinear joints)."""


class ScheduleInfeasibleError(ConfigError):
    pass


class ImpossibleEventError(DidiposeError, ValueError):
    """Conditioning on an event of probability zero."""


class TokenRangeError(DidiposeError, IndexError):
    pass
