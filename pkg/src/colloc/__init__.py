"""Meshfree strong-form collocation for linear elasticity on point clouds."""

from .assembly import Problem, run
from .bench import Setup, compare_methods, convergence_study
from .cloud import PointCloud, load_cloud, save_cloud
from .elasticity import Material
from .errors import CollocError, ConfigError, NumericalError, SolverIOError

__all__ = [
    "CollocError", "ConfigError", "Material", "NumericalError", "PointCloud", "Problem",
    "Setup", "SolverIOError", "compare_methods", "convergence_study", "load_cloud", "run",
    "save_cloud",
]
__version__ = "0.1.0"
