"""Stochastic exponential time differencing for semilinear parabolic SPDEs.

Building blocks: uniform rectangular grids (:mod:`setd.grid`), the Neumann
cosine eigenbasis and exact linear solver (:mod:`setd.spectral`), spectral
Q-Wiener noise with coupled Ornstein-Uhlenbeck functionals
(:mod:`setd.noise`), Krylov / fast-Leja phi-function actions
(:mod:`setd.phi`), finite-volume operators and the Darcy solver
(:mod:`setd.operators`), the SETD0/SETD1 and semi-implicit time steppers
(:mod:`setd.schemes`) and Monte-Carlo convergence studies
(:mod:`setd.experiments`).
"""

from .grid import Boundary, EdgeBC, Grid, Layout, build_grid, l2_inner, l2_norm
from .noise import Convention, NoiseKind, NoiseSpec, RngStream
from .schemes import PhiConfig, Problem, SchemeConfig, SchemeKind, integrate
from .spectral import SpectralBasis

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "EdgeBC",
    "Grid",
    "Layout",
    "build_grid",
    "l2_inner",
    "l2_norm",
    "Convention",
    "NoiseKind",
    "NoiseSpec",
    "RngStream",
    "PhiConfig",
    "Problem",
    "SchemeConfig",
    "SchemeKind",
    "integrate",
    "SpectralBasis",
    "__version__",
]
