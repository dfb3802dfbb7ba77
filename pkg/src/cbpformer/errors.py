"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see ``cbpformer.cli``).
"""


class CBPError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ArgumentError(CBPError, ValueError):
    exit_code = 2


class ConfigurationError(CBPError, ValueError):
    exit_code = 3


class DomainError(CBPError, ValueError):
    """Evaluation point outside the domain of a curve or integrand."""

    exit_code = 5


class DegreeError(CBPError, ValueError):
    exit_code = 5


class AlignmentError(CBPError, ValueError):
    """Two curves that must share knots do not."""

    exit_code = 5


class StructureError(CBPError, ValueError):
    exit_code = 5


class ParameterError(CBPError, ValueError):
    """Problem parameters outside the admissible set."""

    exit_code = 5


class FitError(CBPError, RuntimeError):
    exit_code = 5


class ShapeError(CBPError, ValueError):
    exit_code = 5


class StateError(CBPError, RuntimeError):
    exit_code = 5


class ScenarioError(CBPError, ValueError):
    exit_code = 3


class NumericError(CBPError, ArithmeticError):
    """Non-finite value encountered; ``best`` carries the last good iterate."""

    exit_code = 6

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NonConvergenceError(CBPError, RuntimeError):
    exit_code = 7

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
