"""Exception types raised across the toolkit."""


class FraccalError(Exception):
    """Base class for all toolkit errors."""


class InvalidGeometryError(FraccalError, ValueError):
    pass


class DomainError(FraccalError, ValueError):
    """A parameter lies outside its admissible range (e.g. s not in (0, 1))."""


class GridMismatchError(FraccalError, ValueError):
    pass


class SingularSystemError(FraccalError, ArithmeticError):
    pass


class NoConvergenceError(FraccalError, RuntimeError):
    """The semilinear fixed-point iteration did not contract.

    The partially converged solution is kept on ``solution`` so callers can
    inspect the residual history.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class ParityError(FraccalError, ValueError):
    """Even ``m`` requires every pairing datum ``h`` to be nonnegative."""


class DegenerateApproximantError(FraccalError, ArithmeticError):
    pass


class ConfigError(FraccalError, ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
