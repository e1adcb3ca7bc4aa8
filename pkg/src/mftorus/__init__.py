"""Mean field equations on flat tori under finite translation groups.

Modules
-------
torus         lattices, translation groups, orbit averaging
spectral      grid fields and Fourier operators
green         lattice Green functions and Robin constants
solver        subcritical minimisation and continuation
blowup        bubble profile and concentration diagnostics
certificates  critical-parameter existence conditions and test functions
cli           command line runner
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    ConvergenceError,
    MfTorusError,
    PreconditionError,
    ResolutionError,
    SingularityError,
)
from .torus import UNIT_SQUARE, Point, TorusLattice, TranslationGroup  # noqa: E402
from .spectral import GridField  # noqa: E402

__all__ = [
    "__version__",
    "ConfigurationError",
    "ConvergenceError",
    "MfTorusError",
    "PreconditionError",
    "ResolutionError",
    "SingularityError",
    "UNIT_SQUARE",
    "Point",
    "TorusLattice",
    "TranslationGroup",
    "GridField",
]
