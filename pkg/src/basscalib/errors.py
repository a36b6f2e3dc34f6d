"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class BassCalibError(Exception):
    """Base class for every error raised by the package."""


class DomainError(BassCalibError, ValueError):
    """Input outside the mathematical domain of an operation."""


class AssumptionViolation(DomainError):
    """Marginals violate a structural requirement (convex order, irreducibility,
    support inclusion, density floor)."""


class RangeError(AssumptionViolation):
    """A target lies outside the open range of a transport map."""


class EllipticityError(AssumptionViolation):
    """Derivative density is not bounded away from zero."""


class NumericError(BassCalibError, ArithmeticError):
    """Quadrature or linear algebra produced a non-finite or singular result."""


class NonConvergence(BassCalibError):
    """Iteration budget exhausted; ``trace`` carries the partial history."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class DataError(BassCalibError, ValueError):
    """Market data that cannot be repaired into an arbitrage-free surface."""

    def __init__(self, message: str, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class ParseError(BassCalibError, ValueError):
    """Malformed artifact or config file."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class VerificationError(BassCalibError):
    """A reloaded artifact no longer satisfies its stored fixed-point equations."""
