"""Exception types shared across the package."""


class PdmpError(Exception):
    """Base class for every error raised by pdmpctl."""


class DomainError(PdmpError, ValueError):
    """A point or time outside the region where an object is defined."""


class ContractViolation(PdmpError, ValueError):
    """A caller broke a documented precondition (infeasible action, bad alpha)."""


class NumericError(PdmpError, ArithmeticError):
    """A numerical procedure could not deliver the requested accuracy."""

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info


class DiagnosticError(PdmpError):
    """A runtime check found that a modelling assumption does not hold."""

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info


class ConvergenceError(NumericError):
    """An iterative scheme stopped before meeting its tolerance."""


class ExplosionError(NumericError):
    """A simulated path accumulated more jumps than the explosion guard allows."""


class ConfigError(PdmpError, ValueError):
    """Malformed or inconsistent configuration input."""
