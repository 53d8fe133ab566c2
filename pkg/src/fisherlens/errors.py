"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class FisherlensError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(FisherlensError):
    """Operands have incompatible shapes."""


class DomainError(FisherlensError):
    """Scalar argument outside the mathematically valid domain."""


class NotPositiveDefinite(FisherlensError):
    """Noise covariance failed the positive-definiteness check."""


class ZeroMatrix(FisherlensError):
    """Operator matrix is identically zero and cannot be decomposed."""


class InvalidDof(FisherlensError):
    """Degrees of freedom must be a positive integer."""


class InvalidRadius(FisherlensError):
    """Kernel radius invalid for the requested grid."""


class InvalidSigma(FisherlensError):
    """Kernel width invalid."""


class NoRoot(FisherlensError):
    """Discrepancy equation has no root at the requested level."""


class DegenerateTarget(FisherlensError):
    """Requested misfit target is not strictly positive."""


class InfeasibleConstraint(FisherlensError):
    """Data power is too low for the requested significance level."""


class SolverFailure(FisherlensError):
    """Base for iterative-solver failures; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class MaxItersExceeded(SolverFailure):
    """Iteration budget exhausted before reaching the requested tolerances."""


class NotConverged(SolverFailure):
    """Constrained solver stopped without satisfying its KKT tolerances."""


class ProblemFileError(FisherlensError):
    """Problem description file is malformed or inconsistent."""
