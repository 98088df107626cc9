"""Probabilistic time integration for semi-explicit index-2 DAEs."""

from .core import (
    InconsistentStateError,
    ProblemError,
    SemiExplicitDAE,
    Trajectory,
    check_consistency,
    h_norm,
)
from .integrators import SchemeId, integrate, integrate_batch
from .noise import NoiseSpec
from .problems import constrained_heat, fitzhugh_nagumo, reference_solution

__all__ = [
    "InconsistentStateError",
    "ProblemError",
    "SemiExplicitDAE",
    "Trajectory",
    "check_consistency",
    "h_norm",
    "SchemeId",
    "integrate",
    "integrate_batch",
    "NoiseSpec",
    "constrained_heat",
    "fitzhugh_nagumo",
    "reference_solution",
]

__version__ = "0.1.0"
