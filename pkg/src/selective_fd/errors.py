"""Exception hierarchy shared by every module."""


class SFDError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SFDError, ValueError):
    pass


class ShapeError(SFDError, ValueError):
    pass


class NumericalError(SFDError, ArithmeticError):
    """A factorization, loss, or gradient left the finite range."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class FormatError(SFDError, ValueError):
    pass


class PartitionError(SFDError, ValueError):
    pass


class SpecError(SFDError, ValueError):
    pass


class ConfigError(SFDError, ValueError):
    """Bad configuration; ``line`` is set for file parse failures."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StateError(SFDError, RuntimeError):
    pass


class ProtocolError(SFDError, RuntimeError):
    pass
