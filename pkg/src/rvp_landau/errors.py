"""Exception and warning types shared across the toolkit.

Each error class carries a CLI exit code so batch drivers can map failures
onto the documented exit-code contract without string matching.
"""

from __future__ import annotations


class RVPError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ParameterError(RVPError, ValueError):
    """An argument is outside its admissible range."""

    exit_code = 2


class FormatError(RVPError, ValueError):
    """Input data does not follow the expected layout (grid, CSV, header)."""

    exit_code = 2


class DomainError(RVPError, ValueError):
    """A formula is applied outside the regime where it is meaningful."""

    exit_code = 2


class GevreyOverflowError(RVPError, OverflowError):
    """A Gevrey multiplier exceeds the floating-point range."""

    exit_code = 2

    def __init__(self, message: str, k=None, eta=None):
        super().__init__(message)
        self.k = k
        self.eta = eta


class CoverageError(RVPError, ValueError):
    """A dyadic decomposition does not cover the support of the data."""

    exit_code = 2


class SingularityError(RVPError, ZeroDivisionError):
    """Evaluation requested exactly at a logarithmic singularity."""

    exit_code = 2


class ResolutionError(RVPError, RuntimeError):
    """A grid is too coarse for the requested refinement guarantee."""

    exit_code = 3


class WindowError(RVPError, ValueError):
    """A fit window contains too few usable points."""

    exit_code = 4


class StepSizeError(RVPError, ValueError):
    """A time step violates the stability or solvability bound."""

    exit_code = 2

    def __init__(self, message: str, bound: float | None = None):
        super().__init__(message)
        self.bound = bound


class DivergenceError(RVPError, RuntimeError):
    """A time integration blew up."""

    exit_code = 5

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class ProfileError(RVPError, ValueError):
    """A velocity profile does not vanish at the edge of the unit ball."""

    exit_code = 2


class NearSingularityWarning(RuntimeWarning):
    """Evaluation point lies within 1e-10 of a logarithmic singularity."""


class TruncationWarning(RuntimeWarning):
    """Galerkin truncation discards more than 1% of the field norm."""
