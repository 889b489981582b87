"""Construction and numerical certification of positive-scalar-curvature building blocks.

Modules:

* ``smoothfn``   piecewise-analytic radial profiles and cutoffs
* ``curvature``  closed-form warped scalar curvature and a finite-difference oracle
* ``glsurgery``  torpedo metrics, the surgery handle, neck isotopy, cobordism assembly
* ``morsefold``  fold maps, the cutoff deformation and its certificate
* ``familypipe`` fibrewise construction over a sampled base, sphere-bundle gluing
* ``cli``        batch front end (``pscforge`` console script)
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AdmissibilityError,
    CompatibilityError,
    ConstructionError,
    DegenerateMetricError,
    DomainError,
    FrameError,
    GluingError,
    IncompatibleProfilesError,
    NeckInfeasible,
    NoValidAlpha,
    PscForgeError,
    SingularityError,
)

__all__ = [
    "AdmissibilityError",
    "CompatibilityError",
    "ConstructionError",
    "DegenerateMetricError",
    "DomainError",
    "FrameError",
    "GluingError",
    "IncompatibleProfilesError",
    "NeckInfeasible",
    "NoValidAlpha",
    "PscForgeError",
    "SingularityError",
    "__version__",
]
