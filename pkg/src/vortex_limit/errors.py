"""Exception types raised across the package."""

from __future__ import annotations


class VortexLimitError(Exception):
    """Base class for all package errors."""


# torus_spectral
class NonZeroMean(VortexLimitError):
    """Vorticity with nonzero circulation cannot be inverted on the torus."""


class LatticeSingularity(VortexLimitError):
    """Green's function requested at (or too close to) a lattice point."""


class UnderResolved(VortexLimitError):
    """Grid spacing too coarse for the requested mollifier scale."""


class BadExponent(VortexLimitError):
    """Lebesgue exponent outside [1, inf]."""


# euler_lagrangian
class CflViolation(VortexLimitError):
    """Time step exceeds the advective stability bound."""


class BlowupDetected(VortexLimitError):
    """Vorticity amplitude grew beyond the allowed factor."""


class NotDivergenceFree(VortexLimitError):
    """Velocity field has a non-negligible divergence."""


class WindowMismatch(VortexLimitError):
    """Requested time lies outside the stored trajectory."""


class InterpolationGap(VortexLimitError):
    """Snapshot spacing is coarser than the integration step."""


class MismatchedClouds(VortexLimitError):
    """Two flow maps do not share labels or times."""


# kinetic_ops
class TailNotResolved(VortexLimitError):
    """Velocity distribution does not decay inside the quadrature grid."""


class UnderResolvedShift(VortexLimitError):
    """Velocity grid cannot resolve the requested bulk shift."""


class HydrodynamicRHS(VortexLimitError):
    """Right-hand side has a component in the null space of L."""


# hilbert_expansion
class MissingOperatorCache(VortexLimitError):
    """Kinetic operators needed by the expansion were not supplied."""


# convergence_rates
class DomainError(VortexLimitError):
    """Argument outside the domain of an iterated logarithm/exponential."""


# harness_cli
class ParseError(VortexLimitError):
    """Malformed configuration file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(VortexLimitError):
    """Configuration value violates a module precondition."""


class MissingReport(VortexLimitError):
    """Report file required for plot data does not exist."""
