"""Stochastic Markov gradient descent: lattice-constrained optimization, a theorem lab, and quantized networks."""

from .core import (
    LatticeVector,
    NumericError,
    PreconditionError,
    RunTrace,
    SmgdConfig,
    expected_update,
    run,
    smgd_step,
)
from .estimators import CostProblem, EstimatorKind, EstimatorSpec, make_problem, sample_gradient

__version__ = "0.1.0"

__all__ = [
    "CostProblem",
    "EstimatorKind",
    "EstimatorSpec",
    "LatticeVector",
    "NumericError",
    "PreconditionError",
    "RunTrace",
    "SmgdConfig",
    "expected_update",
    "make_problem",
    "run",
    "sample_gradient",
    "smgd_step",
]
