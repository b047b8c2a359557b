"""Discrete toolkit for p-Laplace / p-parabolic potential theory experiments."""

from .grids import (
    Box,
    Cylinder,
    Grid,
    GridFunction,
    PParams,
    SpaceTimeFunction,
    SpaceTimeGrid,
    gradient,
    lr_norm,
    parabolic_sobolev_norm,
    w1q_norm,
    w1q_seminorm,
)
from .operators import (
    OperatorReport,
    is_supersolution,
    comparison_check,
    p_energy,
    p_laplacian_apply,
    parabolic_supersolution_check,
)
from .elliptic import Infeasible, NonConvergence, SolverOptions, solve_dirichlet, solve_obstacle
from .parabolic import solve_cauchy_dirichlet, solve_parabolic_obstacle, step_implicit
from .measures import (
    DiscreteMeasure,
    NodalFunctional,
    density_functional,
    dual_norm,
    functional_difference,
    mollify,
    mollify_function,
    pairing,
    parabolic_dual_norm,
    riesz_measure,
    riesz_measure_parabolic,
)
from .exact import (
    CriticalExponents,
    barenblatt,
    barenblatt_normalize,
    exponent_bounds,
    fundamental_solution,
    riesz_flux_constant,
    superharmonic_fundamental,
    support_radius,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
