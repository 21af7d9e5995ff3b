"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An input violates an operation's precondition."""


class NumericFailure(RuntimeError):
    """A linear solve or discretization broke down.

    ``condition`` carries the (estimated) condition number when known.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NoConvergence(RuntimeError):
    """An iteration exhausted its budget; ``best`` is the best iterate seen."""

    def __init__(self, message, best=None, residual=None, landscape=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.landscape = landscape


class CompatibilityError(ValueError):
    """Data violate the wall compatibility forced by the equation."""


class TrackingError(RuntimeError):
    """The critical-point curve degenerated; ``last_x`` is the last valid station."""

    def __init__(self, message, last_x=None):
        super().__init__(message)
        self.last_x = last_x


class StabilityError(RuntimeError):
    """A marching step left the admissible range."""

    def __init__(self, message, last_x=None):
        super().__init__(message)
        self.last_x = last_x


class SingularConfiguration(ValueError):
    """A formula's denominator vanishes for the requested parameters."""
