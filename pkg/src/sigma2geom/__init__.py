"""Numerical conformal geometry of closed 3-manifolds.

Curvature of discretized metrics, the cone ``{sigma_1 > 0, sigma_2 > 0}``
for modified Schouten tensors, conformal transformation laws, integral
pinching functionals, and a continuation solver for the path
``sigma_2(g^{-1} A^t_u) = f^2 e^{4u}``.
"""

from .conformal import ConformalFactor, conformal_metric, pinching_margin
from .curvature import CurvatureBundle, catalog, curvature_of, schouten_t
from .grid import ChartGrid, ChartKind, MetricField, ScalarField, SymTensorField, make_grid
from .solver import Sigma2ContinuationSolver, continuation, setup_problem

__version__ = "0.1.0"

__all__ = [
    "ChartGrid",
    "ChartKind",
    "ConformalFactor",
    "CurvatureBundle",
    "MetricField",
    "ScalarField",
    "Sigma2ContinuationSolver",
    "SymTensorField",
    "catalog",
    "conformal_metric",
    "continuation",
    "curvature_of",
    "make_grid",
    "pinching_margin",
    "schouten_t",
    "setup_problem",
]
