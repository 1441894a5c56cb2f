"""Exponential approximation by Stein's method of exchangeable pairs, applied to |Tr U|^2."""

from .stein_core import (
    BoundReport,
    PairStats,
    SmoothingParams,
    SteinSolution,
    TestFunction,
    exp_expectation,
    kolmogorov_bound,
    optimize_delta,
    smooth_bound,
    smoothing_h,
    solve_stein,
    stein_operator,
    verify_solution_bounds,
)
from .symbolic import (
    NPolynomialExpr,
    PowerSumWord,
    expectation,
    fourth_moment_coefficient,
    haar_moment,
    laplacian,
    nabla_pair,
    quadratic_variation,
)
from .unitary import DiffusionStep, UnitaryMatrix, haar_sample, heat_step, matrix_exp_skew, trace_power

__version__ = "0.1.0"
