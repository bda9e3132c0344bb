"""Capacity of spherical face-embedding spaces and MasterFace coverage analysis."""

__version__ = "0.1.0"

from .capacity_solver import CapacityConfig, CapacityResult, capacity, capacity_sweep, distribute
from .coverage_solver import CoverageConfig, CoverageResult, max_coverage, coverage_sweep, place_around_masterface
from .effectiveness import FMR_PRESET, effectiveness, effectiveness_grid
from .geometry import (
    SpherePointSet,
    cosine_similarity,
    pairwise_min_distance,
    project_to_sphere,
    riesz_energy,
)
from .model_fit import PUBLISHED_PARAMS, FitParams, eval_capacity, eval_coverage

__all__ = [
    "CapacityConfig", "CapacityResult", "capacity", "capacity_sweep", "distribute",
    "CoverageConfig", "CoverageResult", "max_coverage", "coverage_sweep", "place_around_masterface",
    "FMR_PRESET", "effectiveness", "effectiveness_grid",
    "SpherePointSet", "cosine_similarity", "pairwise_min_distance", "project_to_sphere", "riesz_energy",
    "PUBLISHED_PARAMS", "FitParams", "eval_capacity", "eval_coverage",
]
