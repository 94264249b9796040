"""Sparse Bayesian learning with partly erroneous prior support knowledge.

Three variational solvers share one engine: conventional SBL, support-aided
SBL with fixed rates on the claimed support (NSL) and support-aided SBL that
learns those rates (SL).
"""

__version__ = "0.1.0"

from .model import (BSchedule, GroundTruth, Mode, PriorSupport, SensingProblem,  # noqa: E402
                    SolverConfig, ValidationError, build_b_schedule)
from .engine import (NumericBreakdownError, PosteriorState, SolverResult,  # noqa: E402
                     elbo, expected_residual, solve, update_alpha, update_b,
                     update_gamma, update_x)

__all__ = [
    "BSchedule", "GroundTruth", "Mode", "PriorSupport", "SensingProblem",
    "SolverConfig", "ValidationError", "build_b_schedule",
    "NumericBreakdownError", "PosteriorState", "SolverResult", "elbo",
    "expected_residual", "solve", "update_alpha", "update_b", "update_gamma",
    "update_x",
]
