"""Exception types raised across the package."""

from __future__ import annotations


class PscForgeError(Exception):
    """Base class for all package errors."""


class DomainError(PscForgeError, ValueError):
    """Argument outside the domain an operation is defined on."""


class IncompatibleProfilesError(PscForgeError, ValueError):
    """Profiles cannot be combined (mismatched radius or node layout)."""


class SingularityError(PscForgeError, ArithmeticError):
    """Curvature requested where a warping function vanishes without analytic closure."""


class DegenerateMetricError(PscForgeError, ArithmeticError):
    """Metric tensor not positive-definite at a stencil point."""


class ConstructionError(PscForgeError):
    """A constructor could not satisfy its own post-conditions."""


class AdmissibilityError(PscForgeError, ValueError):
    """Critical index too large for codimension >= 3 surgery."""


class NeckInfeasible(PscForgeError):
    """Feasibility search exhausted its schedule without an all-positive path."""

    reason = "neck_infeasible"


class NoValidAlpha(PscForgeError):
    """Dyadic descent found no cutoff radius for which the deformation certifies."""

    reason = "no_valid_alpha"


class GluingError(PscForgeError):
    """Two pieces to be glued disagree on their common boundary."""


class FrameError(PscForgeError, ValueError):
    """Overlap frame is not orthogonal or not block-diagonal."""


class CompatibilityError(PscForgeError, ValueError):
    """Background metric does not match the fold's Hessian on its eigenspaces."""
