"""Normalized ground states of the trapped fractional NLS and their stability."""

from .config import ConfigError, RunConfig
from .domain import Field, Grid, functionals, hs_norm, inner, l2_norm
from .dynamics import (
    EvolutionState,
    StabilityTrace,
    coercivity_check,
    evolve,
    orbital_distance,
    run_stability_experiment,
    step_strang,
)
from .groundstate import GroundState, ProblemSpec, solve_fixed_point, solve_gradient_flow
from .operators import OperatorHandle, Potential, apply_H, apply_resolvent
from .spectral import SpectrumReport, certify_indices, eigen_lowest, linearize

__version__ = "0.1.0"
