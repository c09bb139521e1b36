"""Exception hierarchy shared by the solvers and the file readers."""


class HedgeError(Exception):
    """Base class for every error raised by :mod:`statichedge`."""


class InvalidSpecError(HedgeError, ValueError):
    pass


class InvalidAxisError(HedgeError, ValueError):
    pass


class ConditioningError(HedgeError, ValueError):
    """Conditioning on an event of zero probability."""


class EquivalenceError(HedgeError, ValueError):
    """Subjective and risk-neutral laws do not share the same support."""


class SupportError(HedgeError, ValueError):
    pass


class UtilityDomainError(HedgeError, ValueError):
    pass


class UtilityRangeError(HedgeError, ValueError):
    pass


class InsufficientDataError(HedgeError, ValueError):
    pass


class InfeasibleBudgetError(HedgeError, ValueError):
    pass


class ConvergenceError(HedgeError, RuntimeError):
    pass


class AllocationUnboundedError(HedgeError, RuntimeError):
    """Hedge components drift apart while their sum converges."""


class InputFileError(HedgeError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ScaleOverflowError(HedgeError, OverflowError):
    """A result exceeds floating-point range; rescale payoffs or gamma."""
