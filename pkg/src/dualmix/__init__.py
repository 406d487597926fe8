"""Dual-mixed finite elements for the stationary Navier-Stokes equations.

The unknowns are the trace-free velocity gradient G, the velocity u and the
total stress S (including the Bernoulli term).  Three stable element
families are provided: augmented PEERS, augmented AFW and the composite
Raviart-Thomas element on barycentric refinements (``svrt1``).
"""

from .forms import ConstitutiveLaw, apply_traction_bc, assemble_system
from .manufactured import ManufacturedSolution, StokesManufactured
from .mesh import Triangulation, barycentric_refine, extract_macroelements, uniform_square_mesh
from .solver import (SolutionFields, SolverConfig, SolverError, StabilityError, recover_pressure,
                     solve_navier_stokes, solve_stokes)
from .spaces import ElementFamily, build_spaces

__all__ = [
    "ConstitutiveLaw", "ElementFamily", "ManufacturedSolution", "SolutionFields", "SolverConfig",
    "SolverError", "StabilityError", "StokesManufactured", "Triangulation", "apply_traction_bc",
    "assemble_system", "barycentric_refine", "build_spaces", "extract_macroelements",
    "recover_pressure", "solve_navier_stokes", "solve_stokes", "uniform_square_mesh",
]
__version__ = "0.1.0"
