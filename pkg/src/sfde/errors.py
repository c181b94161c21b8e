"""Exception hierarchy shared by every module."""


class SFDEError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(SFDEError, ValueError):
    pass


class OutOfDomain(SFDEError, ValueError):
    """A time lies outside the domain of a path or history."""


class AnticipationError(OutOfDomain):
    """A coefficient functional asked for the path beyond its time argument."""


class DimensionMismatch(SFDEError, ValueError):
    pass


class UnknownProblem(SFDEError, KeyError):
    pass


class NonFinite(SFDEError, ArithmeticError):
    """An Euler iterate became NaN or infinite."""

    def __init__(self, step, resolution=None, message=None):
        self.step = step
        self.resolution = resolution
        if message is None:
            message = f"non-finite iterate at step {step}"
            if resolution is not None:
                message += f" (n={resolution})"
        super().__init__(message)


class TooManyAborts(SFDEError, RuntimeError):
    """More than the tolerated fraction of trajectories hit NonFinite."""

    def __init__(self, aborted, total):
        self.aborted = aborted
        self.total = total
        super().__init__(f"{aborted} of {total} trajectories aborted (limit 1%)")


class InvalidScenario(SFDEError, ValueError):
    pass


class ConfigError(SFDEError, ValueError):
    pass


class DegenerateErrors(SFDEError, ValueError):
    """Errors are zero or non-finite at some resolution, so no log-log fit exists."""
