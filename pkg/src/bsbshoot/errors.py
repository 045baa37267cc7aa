"""Exception types shared across the package."""

from __future__ import annotations


class BsbError(Exception):
    """Base class for all errors raised by this package."""


class ExprError(BsbError):
    """Base class for expression parsing/evaluation errors."""


class ParseError(ExprError):
    """Syntax or name error while parsing an expression.

    Carries the character offset into the source text at which the
    problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalDomainError(ExprError):
    """Evaluation left the real domain (division by zero, sqrt of a
    negative number, overflow to a non-finite value)."""


class ValidationError(BsbError):
    """A problem definition or input file failed validation."""


class SGLCViolated(BsbError):
    """The strengthened generalized Legendre condition failed: the
    second-order bracket Hamiltonian dropped below tolerance where a
    singular evaluation was required."""


class StepFailure(BsbError):
    """The adaptive integrator could not complete a step within its
    step-size limits."""


# The second-variation flow test raises the same failure; both names are
# kept so call sites can use whichever reads better in context.
IntegrationFailure = StepFailure


class StructureBroken(BsbError):
    """An arc-time vector violated 0 < tau1 < tau2 < T."""


class NoConvergence(BsbError):
    """Newton iteration (or a continuation step) failed to converge."""


class SingularJacobian(BsbError):
    """The shooting Jacobian was numerically singular (condition number
    above the configured ceiling)."""


class RankDeficientConstraints(BsbError):
    """The discretized constraint matrix of the coercivity QP lost rank,
    so the reduced Hessian is not well defined."""
