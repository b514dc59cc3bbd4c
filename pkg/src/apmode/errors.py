"""Exception types shared across the package."""


class ApModeError(Exception):
    """Base class for all package errors."""


class InvalidConfig(ApModeError, ValueError):
    pass


class DegenerateGeometry(ApModeError, ValueError):
    """An AP sits exactly on the target, so a range is zero."""


class ZeroChannel(ApModeError, ValueError):
    pass


class NotPSD(ApModeError, ValueError):
    """A covariance matrix is too indefinite to be repaired by clipping."""


class SingularFIM(ApModeError, ArithmeticError):
    """The Fisher information matrix is singular; the target is not localizable."""


class InfeasibleGeometry(ApModeError):
    pass


class Infeasible(ApModeError):
    """An optimization stage has no feasible point.

    ``stage`` names the failing stage when an algorithm has several.
    """

    def __init__(self, message="infeasible", stage=None):
        super().__init__(message)
        self.stage = stage


class ExhaustedRestarts(Infeasible):
    pass


class TimeLimitReached(ApModeError):
    pass


class TooLarge(ApModeError, ValueError):
    pass


class EmptyInput(ApModeError, ValueError):
    pass
