"""Load optimization for the p-Laplacian membrane with Neumann boundary loads."""

from .errors import (ClassViolationError, ConfigurationError, DomainError, MembraneError,
                     NonConvergenceError, PerturbationTooLargeError, SolverError)
from .mesh import BoundaryRegion, DomainSpec, Mesh, arc_region, build_mesh, make_region, refine_uniform
from .fem import BoundaryLoad, SolverConfig, StateSolution, cost_J, energy, functional_I, solve_state
from .optimize import (AscentConfig, ascent_bathtub, ascent_rearrangement, bathtub_discrete,
                       best_rearrangement, lq_optimal_load, multistart_bathtub,
                       multistart_rearrangement, optimality_residual, superlevel_region,
                       trace_extremal)
from .shape import TangentialVelocity, fd_check, perturb_region, shape_derivative_J
from .oracle import FourierLoad, arc_fourier, bessel_I, best_arc_search, solve_disk

__version__ = "0.1.0"
