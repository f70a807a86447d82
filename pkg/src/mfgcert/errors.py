"""Exception types shared across the package."""


class SpecError(ValueError):
    """A problem definition violates a modelling requirement."""


class ConfigError(SpecError):
    """A run configuration could not be turned into a legal problem."""


class IncompatibleRhs(ValueError):
    """Right-hand side of a Neumann problem does not integrate to zero."""


class NoConvergence(RuntimeError):
    """An inner iterative solve hit its iteration cap."""


class InfeasiblePoint(ValueError):
    """A point lies outside the effective domain of a convex function."""


class MaxIterExceeded(RuntimeError):
    """The outer solver stopped without meeting its stopping rule.

    The best iterate found is kept on ``solution`` together with its
    residuals so callers can still inspect or write it out.
    """

    def __init__(self, message, solution=None, stage=None):
        super().__init__(message)
        self.solution = solution
        self.stage = stage
