"""Numerical toolkit for multi-point concentration in a planar Liouville-type
problem with point sources.

The pipeline: validate the (N, weights) data, build an initial configuration
on small annuli around the sources, minimize the renormalized interaction
energy over that class, refine to a critical point, assemble the matching
bubble approximation, and verify the predicted concentration by solving the
regularized PDE directly.
"""

__version__ = "0.1.0"

from .geometry import DomainSpec, star_domain, unit_disk
from .green import DiskGreen, GridGreen, make_green_engine
from .energy import Configuration, SingularSet

__all__ = [
    "DomainSpec",
    "unit_disk",
    "star_domain",
    "make_green_engine",
    "DiskGreen",
    "GridGreen",
    "SingularSet",
    "Configuration",
    "__version__",
]
