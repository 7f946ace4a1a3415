"""Preconditioned Langevin diffusion sampling on C×H×W grids."""

__version__ = "0.1.0"

from .grid import Field, GridShape, SpectralField, read_grid, write_grid
from .precondition import Preconditioner, SkewOperator
from .sampler import DivergenceError, SamplerConfig, StepSchedule, Trajectory, run, run_batch
from .targets import GaussianTarget, GrfTarget, MixtureTarget

__all__ = [
    "DivergenceError",
    "Field",
    "GaussianTarget",
    "GridShape",
    "GrfTarget",
    "MixtureTarget",
    "Preconditioner",
    "SamplerConfig",
    "SkewOperator",
    "SpectralField",
    "StepSchedule",
    "Trajectory",
    "read_grid",
    "run",
    "run_batch",
    "write_grid",
]
