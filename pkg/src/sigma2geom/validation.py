"""Input checks shared by the estimator, the suites and the command line."""

from __future__ import annotations

import numpy as np

from .grid import ChartGrid, GridError, MetricField, ScalarField, SymTensorField


def check_metric(g) -> MetricField:
    """Accept a :class:`MetricField` or a ``(grid, values)`` pair."""
    if isinstance(g, MetricField):
        return g
    if isinstance(g, SymTensorField):
        return MetricField(g)
    if isinstance(g, tuple) and len(g) == 2 and isinstance(g[0], ChartGrid):
        return MetricField.from_values(*g)
    raise TypeError(f"expected a MetricField, got {type(g).__name__}")


def check_scalar_field(u, grid: ChartGrid) -> ScalarField:
    """Coerce ``u`` (field, array or scalar) onto ``grid`` and check it is finite."""
    if isinstance(u, ScalarField):
        if u.grid != grid:
            raise GridError("scalar field lives on a different grid")
        return u
    arr = np.asarray(u, dtype=float)
    if arr.shape not in ((), grid.shape):
        raise GridError(f"expected shape {grid.shape}, got {arr.shape}")
    return ScalarField(grid, arr)
