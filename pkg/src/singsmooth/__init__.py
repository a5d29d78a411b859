"""Robust Kalman smoothing with singular process and measurement covariances.

The smoother works with square-root factors ``Q = C C^T`` and ``R = S S^T``
that may be rank deficient, piecewise linear-quadratic losses on the whitened
innovations, and optional box constraints on the states.  Problems are solved
by Douglas-Rachford splitting; the affine projection reuses a single block
Cholesky factor of ``A A^T``.
"""

from .errors import (DimensionError, ModelError, OracleError, ParameterError,
                     RankDeficiencyError, SingSmoothError)
from .model import (Layout, Problem, StackedVector, TimeStep, add_exact_measurement,
                    augment_bias, augment_correlated_noise, factor_from_covariance, objective,
                    validate)
from .penalties import Penalty, SeparablePenalty, prox, prox_conjugate
from .solver import SolveResult, SolverConfig, kkt_certificate, solve, warm_start

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "ModelError", "OracleError", "ParameterError", "RankDeficiencyError",
    "SingSmoothError", "Layout", "Problem", "StackedVector", "TimeStep",
    "add_exact_measurement", "augment_bias", "augment_correlated_noise",
    "factor_from_covariance", "objective", "validate", "Penalty", "SeparablePenalty", "prox",
    "prox_conjugate", "SolveResult", "SolverConfig", "kkt_certificate", "solve", "warm_start",
]
