"""Exception hierarchy shared by all modules."""


class MfTorusError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MfTorusError, ValueError):
    """Invalid setup: incompatible grids, bad groups, violated geometric bounds."""


class PreconditionError(MfTorusError, ValueError):
    """An operation was called on input outside its domain."""


class SingularityError(MfTorusError, ValueError):
    """Evaluation at a logarithmic singularity of a Green function."""


class ResolutionError(ConfigurationError):
    """The grid does not resolve the requested length scale."""


class ConvergenceError(MfTorusError, RuntimeError):
    """A numerical iteration failed; ``state`` holds the last good iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
