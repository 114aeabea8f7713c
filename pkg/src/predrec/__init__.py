"""Predictive recursion for nonparametric mixing distributions, with a
particle engine for higher-dimensional mixing spaces."""

__version__ = "0.1.0"

from .core import (
    DataError,
    Dataset,
    DegeneracyError,
    MarkedPoint,
    PRError,
    WeightSchedule,
    permute_dataset,
)
from .kernels import (
    AngularGaussianKernel,
    BivariateGaussianKernel,
    GaussianIsoKernel,
    MarkedPPKernel,
)
from .particles import ParticleSet, ess, init_particles, permutation_average, run_prticle
from .quadrature import GridDensity, make_grid, make_sphere_grid, run_pr_quadrature
from .refresh import run_with_refresh
from .sampling import UniformBox, rng_stream

__all__ = [
    "AngularGaussianKernel",
    "BivariateGaussianKernel",
    "DataError",
    "Dataset",
    "DegeneracyError",
    "GaussianIsoKernel",
    "GridDensity",
    "MarkedPPKernel",
    "MarkedPoint",
    "PRError",
    "ParticleSet",
    "UniformBox",
    "WeightSchedule",
    "ess",
    "init_particles",
    "make_grid",
    "make_sphere_grid",
    "permutation_average",
    "permute_dataset",
    "run_pr_quadrature",
    "run_prticle",
    "rng_stream",
    "run_with_refresh",
]
