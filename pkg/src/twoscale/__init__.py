"""Discrete two-scale homogenization.

Exact unfolding on commensurate grids, cell problems and effective
tensors, causal solvers for evolutionary block systems, and the
elliptic, Maxwell and wave two-scale limits built on them.
"""

from .cell import (
    CoefficientField,
    HomogenizedTensor,
    ProbabilityModel,
    build_projection,
    homogenize,
    monte_carlo_ahom,
    solve_cell_problem,
    solve_memory_correctors,
)
from .evol import EvolutionarySystem, MaterialLaw, TimeSignal, WeightedTimeGrid, solve_time_domain
from .mesh import GridSpec, TorusGrid
from .unfold import IncommensurateError, UnfoldConfig, UnfoldOperator

__version__ = "0.1.0"

__all__ = [
    "CoefficientField",
    "HomogenizedTensor",
    "ProbabilityModel",
    "build_projection",
    "homogenize",
    "monte_carlo_ahom",
    "solve_cell_problem",
    "solve_memory_correctors",
    "EvolutionarySystem",
    "MaterialLaw",
    "TimeSignal",
    "WeightedTimeGrid",
    "solve_time_domain",
    "GridSpec",
    "TorusGrid",
    "IncommensurateError",
    "UnfoldConfig",
    "UnfoldOperator",
]
