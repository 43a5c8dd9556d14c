"""Exception hierarchy shared across the package."""


class StcpError(Exception):
    """Base class for all errors raised by :mod:`stcp`."""


class DimensionMismatch(StcpError, ValueError):
    pass


class EmptyInput(StcpError, ValueError):
    pass


class InvalidAlpha(StcpError, ValueError):
    pass


class InvalidLevel(StcpError, ValueError):
    pass


class DegenerateDesign(StcpError, ValueError):
    pass


class NonFinite(StcpError, FloatingPointError):
    """A training or alignment step produced a non-finite value.

    ``trace`` carries whatever diagnostics the raising routine collected
    (iteration index, objective history, offending parameter vector).
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class BracketFailure(StcpError, RuntimeError):
    pass


class DegenerateDensity(StcpError, FloatingPointError):
    pass


class InfeasibleAll(StcpError, RuntimeError):
    pass


class TooFewValues(StcpError, ValueError):
    pass


class NonPositiveBase(StcpError, ValueError):
    pass


class DegenerateReference(StcpError, ValueError):
    pass


class TooFewPoints(StcpError, ValueError):
    pass


class ConfigError(StcpError, ValueError):
    """Invalid experiment configuration; ``pointer`` is a JSON pointer."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"
