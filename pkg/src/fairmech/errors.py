"""Exception hierarchy shared by the solvers and the CLI."""


class FairMechError(Exception):
    """Base class for all package errors."""


class DomainError(FairMechError, ValueError):
    """A value lies outside a distribution's support."""


class RangeError(FairMechError, ValueError):
    """A virtual value lies outside the attainable range."""


class RegularityError(FairMechError, ValueError):
    """A distribution's virtual value is not non-decreasing."""


class ParameterError(FairMechError, ValueError):
    """Invalid solver or plan parameters."""


class InfeasibleError(FairMechError):
    """No mechanism can meet the requested allocation levels.

    ``state`` carries the offending residual state when raised by the
    dynamic solver.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NumericalError(FairMechError, ArithmeticError):
    """Quadrature or root finding failed to reach its tolerance."""


class RegimeError(FairMechError):
    """An operation was requested in a round regime that does not support it."""


class ConfigError(FairMechError, ValueError):
    """A configuration file is missing, malformed or inconsistent."""
