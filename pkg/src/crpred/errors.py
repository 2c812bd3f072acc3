"""Exception types raised by crpred.

Every error carries enough context (the parameter value, the operation) for the
CLI to print a useful message and pick an exit code.
"""

from __future__ import annotations


class CRPredError(Exception):
    """Base class for all library errors."""


class DomainError(CRPredError):
    """Parameter outside the open parameter domain."""


class EvaluationError(CRPredError):
    """A density or log-density evaluated to a non-finite value."""


class CapabilityError(CRPredError):
    """The model lacks a capability (sampler, quadrature hints, enumeration)."""


class IntegrandError(CRPredError):
    """An integrand was +inf or NaN on a set of positive mass."""


class CoverageError(CRPredError):
    """Quadrature box or discrete truncation failed to capture enough mass."""


class AbsoluteContinuityError(CRPredError):
    """A likelihood ratio was infinite, or P_theta put mass outside supp P_theta0."""


class SupportError(CRPredError):
    """Score requested at a point of zero density."""


class SingularityError(CRPredError):
    """A matrix that must be inverted is singular or badly conditioned."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class QuadratureError(CRPredError):
    """Path quadrature failed to converge under refinement."""


class NormalizationError(CRPredError):
    """A constructed family does not integrate to one."""


class ConfigError(CRPredError):
    """Invalid run configuration (CLI)."""
