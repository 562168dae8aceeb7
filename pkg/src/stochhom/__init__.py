"""Numerical experiments for the modified corrector equation of discrete
stochastic homogenization on periodic lattices."""
from .ensembles import CoefficientField, EnsembleSpec, load_ensemble, sample_field
from .lattice import TorusGrid, divergence_star, gradient
from .solver import CorrectorProblem, OperatorHandle, SolverError, solve, solve_corrector, solve_green

__version__ = "0.1.0"

__all__ = [
    "CoefficientField", "CorrectorProblem", "EnsembleSpec", "OperatorHandle", "SolverError", "TorusGrid",
    "divergence_star", "gradient", "load_ensemble", "sample_field", "solve", "solve_corrector", "solve_green",
]
