"""Electromagnetic scattering by many small bodies and the effective medium
they create in the small-particle limit."""

from .core_types import (
    CONSTANT_SHAPE,
    UNIT_CUBE,
    Box,
    DistributionLaw,
    MediumSpec,
    Particle,
    PlaneWave,
    Shape,
    make_plane_wave,
)
from .errors import NumericalError, SmallBodyError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "CONSTANT_SHAPE",
    "UNIT_CUBE",
    "Box",
    "DistributionLaw",
    "MediumSpec",
    "Particle",
    "PlaneWave",
    "Shape",
    "make_plane_wave",
    "NumericalError",
    "SmallBodyError",
    "ValidationError",
]
