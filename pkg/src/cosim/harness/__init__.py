"""Experiment drivers, test problems and the command line interface."""
from .problems import PROBLEMS, Problem, linear_offdiag, linear_triangular, make_problem, spring_mass
from .studies import (ConvergenceReport, balance_correction_study, balance_variants,
                      convergence_study, estimate_order, h_levels, order_variants,
                      pitfall_experiment, pitfall_variants, stability_experiment)

__all__ = [
    "PROBLEMS", "Problem", "ConvergenceReport", "balance_correction_study", "balance_variants",
    "convergence_study", "estimate_order", "h_levels", "linear_offdiag", "linear_triangular",
    "make_problem", "order_variants", "pitfall_experiment", "pitfall_variants", "spring_mass",
    "stability_experiment",
]
