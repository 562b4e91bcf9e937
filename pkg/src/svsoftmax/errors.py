"""Exception and warning types raised across the package."""


class SvSoftmaxError(Exception):
    """Base class for all package errors."""


class DegenerateVector(SvSoftmaxError, ValueError):
    """A vector's L2 norm is at or below the normalization floor."""


class DimensionMismatch(SvSoftmaxError, ValueError):
    pass


class InvalidMargin(SvSoftmaxError, ValueError):
    pass


class InvalidValue(SvSoftmaxError, ValueError):
    """A parameter violates the invariant of its owning type."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StaleForward(SvSoftmaxError, ValueError):
    """Backward was handed a forward pass computed on different inputs."""


class Diverged(SvSoftmaxError, RuntimeError):
    """Training produced a non-finite loss. ``history`` holds the finite epochs."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class CenterCollision(SvSoftmaxError, RuntimeError):
    pass


class InsufficientData(SvSoftmaxError, ValueError):
    pass


class MissingArtifacts(SvSoftmaxError, FileNotFoundError):
    pass


class ParseError(SvSoftmaxError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ParseError):
    pass


class BoundaryProximity(UserWarning):
    """A gradient-check sample sits on a non-differentiable decision boundary."""
