"""Depth-resolved FRET between an implanted donor ensemble and a 2D acceptor sheet.

Forward simulation of TCSPC decays and FLIM cubes, lifetime fitting, and
inversion of effective lifetimes to a Foerster radius.
"""

from nvfret.errors import (
    ConfigError,
    DataFormatError,
    DomainError,
    GatingError,
    NumericalError,
    PreconditionError,
    RangeError,
)
from nvfret.model import (
    DepthDistribution,
    ModelParams,
    depth_density,
    fret_efficiency,
    nonradiative_rate,
    quenched_intensity,
    quenched_lifetime,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataFormatError",
    "DepthDistribution",
    "DomainError",
    "GatingError",
    "ModelParams",
    "NumericalError",
    "PreconditionError",
    "RangeError",
    "depth_density",
    "fret_efficiency",
    "nonradiative_rate",
    "quenched_intensity",
    "quenched_lifetime",
]
