"""Barotropic quasi-geostrophic dynamics with a free-surface closure.

The potential vorticity q = (Laplacian) psi + beta y - psi is transported by
u = perp-grad psi; the stream function is recovered from q by a modified
Helmholtz solve whose constant boundary value is fixed by mass conservation.
The package provides that constrained inversion, flow maps under the
resulting log-Lipschitz velocities, the semi-Lagrangian outer iteration
that constructs solutions, and diagnostics that turn the supporting
estimates into executable checks.
"""

from .elliptic import (LinearSolveSettings, StreamSolution,
                       compute_boundary_constant, mass_tolerance,
                       psi2_solution, solve_constrained,
                       solve_constrained_rhs, solve_dirichlet,
                       solve_time_derivative)
from .errors import (ConfigError, GeometryError, OuterIterationError,
                     PicardConvergenceError, SolverError,
                     TrajectoryEscapeError)
from .flowmap import (PicardTrace, PiecewiseVelocity, TrajectorySet,
                      area_check, cell_seed_grid, integrate_rk4,
                      picard_iterate, velocity_from_stream)
from .geometry import (Domain, ScalarField, VectorField, build_domain,
                       integrate, interpolate, mean, remove_mean)
from .kernels import (chi, chi_majorant, green_free,
                      green_free_radial_derivative, kernel_K)
from .scheme import (Forcing, RunConfig, RunHistory, SchemeState, advect_pv,
                     init_state, initial_pv, outer_iterate, run_fixed_point,
                     time_march)

__version__ = "0.1.0"

__all__ = [
    "LinearSolveSettings", "StreamSolution", "compute_boundary_constant",
    "mass_tolerance", "psi2_solution", "solve_constrained",
    "solve_constrained_rhs", "solve_dirichlet", "solve_time_derivative",
    "ConfigError", "GeometryError", "OuterIterationError",
    "PicardConvergenceError", "SolverError", "TrajectoryEscapeError",
    "PicardTrace", "PiecewiseVelocity", "TrajectorySet", "area_check",
    "cell_seed_grid", "integrate_rk4", "picard_iterate",
    "velocity_from_stream",
    "Domain", "ScalarField", "VectorField", "build_domain", "integrate",
    "interpolate", "mean", "remove_mean",
    "chi", "chi_majorant", "green_free", "green_free_radial_derivative",
    "kernel_K",
    "Forcing", "RunConfig", "RunHistory", "SchemeState", "advect_pv",
    "init_state", "initial_pv", "outer_iterate", "run_fixed_point",
    "time_march",
    "__version__",
]
