"""Thermoacoustic tomography by Dirichlet eigenfunction expansion.

Forward model: leapfrog finite differences for p_tt = c^2 Lap p on a grid
containing the observation rectangle B, recording p on the boundary of B.
Inverse: boundary coefficient series g_k(t) against the Dirichlet eigenpairs
of -c^2 Lap on B, turned into f_k = <f, psi_k> by time integrals.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CFLError,
    ConfigError,
    ConvergenceError,
    FormatError,
    GeometryError,
    NonFiniteError,
    NumericalError,
    TateRecError,
)
from .fields import (  # noqa: E402
    Disk,
    DomainSpec,
    Gaussian,
    Grid,
    ObservationSurface,
    PhantomSpec,
    Ring,
    ScalarField,
    SineBox,
    Sinogram,
    SmoothBump,
    SoundSpeedField,
    build_observation_surface,
    make_grid,
    sample_phantom,
    sample_sound_speed,
)

__all__ = [
    "__version__",
    "CFLError",
    "ConfigError",
    "ConvergenceError",
    "FormatError",
    "GeometryError",
    "NonFiniteError",
    "NumericalError",
    "TateRecError",
    "Disk",
    "DomainSpec",
    "Gaussian",
    "Grid",
    "ObservationSurface",
    "PhantomSpec",
    "Ring",
    "ScalarField",
    "SineBox",
    "Sinogram",
    "SmoothBump",
    "SoundSpeedField",
    "build_observation_surface",
    "make_grid",
    "sample_phantom",
    "sample_sound_speed",
]
