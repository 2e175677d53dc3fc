"""Numerical laboratory for axially symmetric relativistic membranes."""

from .catalog import CatalogEntry, get_entry, list_entries
from .evolve import EvolutionConfig, convergence_study, evolve, evolve_entry
from .grid import Field1, Field2, Grid1, Grid2, diff, mixed_diff, sample
from .perturb import Mode, check_constraint, double_star_ratio, level_set_form, numeric_mode_fit, star
from .reduction import Family, ReductionSpec, ansatz_coefficients, ode_residual, to_abel
from .residual import EquationId, ResidualReport, degeneracy, residual
from .transform import build_char_pair, involution_check, invert, pushforward, transform

__all__ = [
    "CatalogEntry", "get_entry", "list_entries",
    "EvolutionConfig", "convergence_study", "evolve", "evolve_entry",
    "Field1", "Field2", "Grid1", "Grid2", "diff", "mixed_diff", "sample",
    "Mode", "check_constraint", "double_star_ratio", "level_set_form", "numeric_mode_fit", "star",
    "Family", "ReductionSpec", "ansatz_coefficients", "ode_residual", "to_abel",
    "EquationId", "ResidualReport", "degeneracy", "residual",
    "build_char_pair", "invert", "involution_check", "pushforward", "transform",
]

__version__ = "0.1.0"
