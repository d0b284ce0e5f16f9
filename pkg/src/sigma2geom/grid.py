"""Coordinate charts, discrete fields, finite differences and quadrature.

Two chart kinds are supported:

``Torus3``
    A periodic box ``[0, L_1) x [0, L_2) x [0, L_3)`` with uniform nodes.

``S3Band``
    Hopf coordinates ``(r, theta, phi)`` on the 3-sphere, where the round
    metric reads ``dr^2 + sin^2 r dtheta^2 + cos^2 r dphi^2``.  The ``r`` axis
    uses staggered nodes ``r_j = (j + 1/2) h`` with ``h = (pi/2)/N`` so that the
    coordinate poles ``r = 0`` and ``r = pi/2`` are never sampled.  Ghost values
    across the poles are obtained by reflection: the point ``(-r, theta)`` is
    ``(r, theta + pi)`` and ``(pi - r, phi)`` is ``(r, phi + pi)``, with a sign
    flip for tensor components carrying an odd number of ``r`` indices.

Axes of size 1 are *trivial*: the data does not depend on that coordinate
and derivatives along it vanish.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * np.pi
MIN_ACTIVE_NODES = 4

TORUS_COORDS = ("x", "y", "z")
S3_COORDS = ("r", "theta", "phi")


class GridError(ValueError):
    """Invalid chart construction or mismatched grids."""


class ChartKind(str, enum.Enum):
    TORUS3 = "Torus3"
    S3BAND = "S3Band"


@dataclass(frozen=True)
class ChartGrid:
    kind: ChartKind
    dims: tuple[int, int, int]
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.dims))

    @property
    def coordinate_names(self) -> tuple[str, str, str]:
        return S3_COORDS if self.kind is ChartKind.S3BAND else TORUS_COORDS

    def active(self, axis: int) -> bool:
        return self.dims[axis] > 1

    @property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a in range(3) if self.active(a))

    @property
    def h(self) -> float:
        """Largest spacing over the active axes (the refinement parameter)."""
        return max(self.spacing[a] for a in self.active_axes)

    def axis_nodes(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        step = self.spacing[axis]
        if self.kind is ChartKind.S3BAND and axis == 0:
            return self.lower[0] + (np.arange(n) + 0.5) * step
        return self.lower[axis] + np.arange(n) * step

    def coordinates(self) -> dict[str, np.ndarray]:
        """Broadcast node coordinates keyed by coordinate name."""
        mesh = np.meshgrid(*(self.axis_nodes(a) for a in range(3)), indexing="ij")
        return dict(zip(self.coordinate_names, mesh))


def make_grid(kind, dims: Sequence[int], ranges=None) -> ChartGrid:
    """Build a chart.

    ``ranges`` is one entry per axis, either a length ``L`` (meaning
    ``[0, L)``) or a ``(lo, hi)`` pair.  For ``S3Band`` the ranges are fixed
    (``r`` in ``(0, pi/2)``, angles in ``[0, 2 pi)``); passing anything else is
    an error.
    """
    try:
        kind = ChartKind(kind)
    except ValueError:
        raise GridError(f"unknown chart kind {kind!r}") from None
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3:
        raise GridError(f"expected 3 node counts, got {len(dims)}")
    for axis, n in enumerate(dims):
        if n < 1 or (1 < n < MIN_ACTIVE_NODES):
            raise GridError(
                f"axis {axis} has {n} nodes; active axes need at least "
                f"{MIN_ACTIVE_NODES} (size 1 marks a trivial axis)"
            )

    if kind is ChartKind.S3BAND:
        if dims[0] < MIN_ACTIVE_NODES:
            raise GridError("the r axis of an S3Band chart must be active")
        for axis in (1, 2):
            if dims[axis] > 1 and dims[axis] % 2:
                raise GridError("angular axes need an even node count for pole reflection")
        default = ((0.0, np.pi / 2), (0.0, TWO_PI), (0.0, TWO_PI))
        if ranges is not None:
            given = _normalize_ranges(ranges)
            if not np.allclose(given, default, rtol=0, atol=1e-12):
                raise GridError("S3Band ranges are fixed: r in (0, pi/2), angles in [0, 2pi)")
        lo, hi = zip(*default)
    else:
        if ranges is None:
            ranges = [TWO_PI] * 3
        lo, hi = zip(*_normalize_ranges(ranges))
    return ChartGrid(kind, dims, tuple(map(float, lo)), tuple(map(float, hi)))


def _normalize_ranges(ranges) -> list[tuple[float, float]]:
    if np.isscalar(ranges):
        ranges = [ranges] * 3
    ranges = list(ranges)
    if len(ranges) != 3:
        raise GridError(f"expected 3 ranges, got {len(ranges)}")
    out = []
    for axis, item in enumerate(ranges):
        if np.isscalar(item):
            a, b = 0.0, float(item)
        else:
            a, b = (float(v) for v in item)
        if not np.isfinite(a) or not np.isfinite(b) or b <= a:
            raise GridError(f"axis {axis}: range must have positive length, got ({a}, {b})")
        out.append((a, b))
    return out


# -- fields -----------------------------------------------------------------


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: ChartGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.broadcast_to(np.asarray(self.values, dtype=float), self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise GridError("scalar field has non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def constant(cls, grid: ChartGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self.grid, other.grid)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


_VOIGT = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Symmetric (0,2) tensor field.

    Stored as full ``(..., 3, 3)`` arrays; the input is symmetrized on
    construction so symmetry holds exactly.
    """

    grid: ChartGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values = np.broadcast_to(values, self.grid.shape + (3, 3))
        values = 0.5 * (values + np.swapaxes(values, -1, -2))
        if not np.all(np.isfinite(values)):
            raise GridError("tensor field has non-finite entries")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_components(cls, grid: ChartGrid, comps) -> "SymTensorField":
        """Build from the six components ordered 11, 22, 33, 12, 13, 23."""
        comps = [np.broadcast_to(np.asarray(c, dtype=float), grid.shape) for c in comps]
        if len(comps) != 6:
            raise GridError("expected 6 symmetric components")
        values = np.zeros(grid.shape + (3, 3))
        for (i, j), c in zip(_VOIGT, comps):
            values[..., i, j] = c
            values[..., j, i] = c
        return cls(grid, values)

    def components(self) -> np.ndarray:
        """The six independent components, shape ``grid.shape + (6,)``."""
        return np.stack([self.values[..., i, j] for i, j in _VOIGT], axis=-1)

    def __add__(self, other):
        if isinstance(other, SymTensorField):
            _check_same_grid(self.grid, other.grid)
            other = other.values
        return SymTensorField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, SymTensorField):
            _check_same_grid(self.grid, other.grid)
            other = other.values
        return SymTensorField(self.grid, self.values - other)

    def scale(self, factor) -> "SymTensorField":
        if isinstance(factor, ScalarField):
            factor = factor.values
        return SymTensorField(self.grid, np.asarray(factor)[..., None, None] * self.values)


class MetricField:
    """Riemannian metric field; positive definiteness is checked on construction."""

    def __init__(self, base: SymTensorField):
        if not isinstance(base, SymTensorField):
            base = SymTensorField(*base)
        eig = np.linalg.eigvalsh(base.values)
        if not np.all(eig[..., 0] > 0):
            idx = np.unravel_index(np.argmin(eig[..., 0]), base.grid.shape)
            raise GridError(f"metric is not positive definite at node {tuple(int(i) for i in idx)}")
        self.base = base

    @classmethod
    def from_values(cls, grid: ChartGrid, values) -> "MetricField":
        return cls(SymTensorField(grid, values))

    @property
    def grid(self) -> ChartGrid:
        return self.base.grid

    @property
    def values(self) -> np.ndarray:
        return self.base.values

    @cached_property
    def inverse(self) -> np.ndarray:
        inv = np.linalg.inv(self.values)
        return 0.5 * (inv + np.swapaxes(inv, -1, -2))

    @cached_property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.values)

    @cached_property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)

    @cached_property
    def condition(self) -> np.ndarray:
        eig = np.linalg.eigvalsh(self.values)
        return eig[..., -1] / eig[..., 0]


def _check_same_grid(a: ChartGrid, b: ChartGrid):
    if a != b:
        raise GridError("fields live on different grids")


def flat_metric(grid: ChartGrid) -> MetricField:
    return MetricField.from_values(grid, np.broadcast_to(np.eye(3), grid.shape + (3, 3)))


# -- finite differences -----------------------------------------------------


def _ghosts(arr: np.ndarray, grid: ChartGrid, parity):
    """Ghost slices below r_0 and above r_{N-1} on the S3Band r axis."""
    p_lo, p_hi = parity if isinstance(parity, tuple) else (parity, parity)
    lo = arr[0:1]
    hi = arr[-1:]
    if grid.dims[1] > 1:
        lo = np.roll(lo, grid.dims[1] // 2, axis=1)
    if grid.dims[2] > 1:
        hi = np.roll(hi, grid.dims[2] // 2, axis=2)
    return np.asarray(p_lo) * lo, np.asarray(p_hi) * hi


def _padded(arr: np.ndarray, grid: ChartGrid, axis: int, parity) -> np.ndarray:
    if grid.kind is ChartKind.S3BAND and axis == 0:
        lo, hi = _ghosts(arr, grid, parity)
    else:
        lo = np.take(arr, [-1], axis=axis)
        hi = np.take(arr, [0], axis=axis)
    return np.concatenate([lo, arr, hi], axis=axis)


def diff(arr: np.ndarray, grid: ChartGrid, axis: int, order: int = 1, parity=1) -> np.ndarray:
    """Centered second-order derivative of raw node data along ``axis``.

    ``arr`` has shape ``grid.shape`` plus optional trailing component axes.
    ``parity`` (a number, an array broadcasting against the trailing axes, or
    a ``(low, high)`` pair of those) sets the reflection sign at the S3Band
    poles; it is ignored on periodic axes.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    arr = np.asarray(arr, dtype=float)
    if not grid.active(axis):
        return np.zeros_like(arr)
    h = grid.spacing[axis]
    p = _padded(arr, grid, axis, parity)
    n = arr.shape[axis]
    up = np.take(p, np.arange(2, n + 2), axis=axis)
    down = np.take(p, np.arange(0, n), axis=axis)
    if order == 1:
        return (up - down) / (2.0 * h)
    return (up - 2.0 * arr + down) / (h * h)


def fd_partial(field: ScalarField, axis: int, order: int = 1, parity=1) -> ScalarField:
    """Partial derivative of a scalar field (second-order centered stencil)."""
    if not 0 <= axis < 3:
        raise GridError(f"axis {axis} out of range")
    if not field.grid.active(axis):
        raise GridError(f"axis {axis} is trivial on this grid")
    return ScalarField(field.grid, diff(field.values, field.grid, axis, order, parity))


def flip(parity):
    if isinstance(parity, tuple):
        return tuple(-np.asarray(p) for p in parity)
    return -np.asarray(parity)


def gradient(arr: np.ndarray, grid: ChartGrid, parity=1) -> np.ndarray:
    """Coordinate gradient ``d_i f`` with shape ``arr.shape + (3,)``."""
    return np.stack([diff(arr, grid, a, 1, parity) for a in range(3)], axis=-1)


def second_partials(arr: np.ndarray, grid: ChartGrid, parity=1) -> np.ndarray:
    """Coordinate second partials ``d_i d_j f`` with shape ``arr.shape + (3, 3)``.

    Pure second derivatives use the three-point stencil; mixed ones nest first
    derivatives, applying the r-axis derivative last.
    """
    out = np.zeros(arr.shape + (3, 3))
    first = [diff(arr, grid, a, 1, parity) for a in range(3)]
    for i in range(3):
        out[..., i, i] = diff(arr, grid, i, 2, parity)
        for j in range(i + 1, 3):
            # j > i >= 0, so axis i is applied last; for S3Band that is r when i == 0
            mixed = diff(first[j], grid, i, 1, parity)
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


# -- quadrature ---------------------------------------------------------------


def fejer_weights(n: int) -> np.ndarray:
    """Fejer's first-rule weights on ``[-1, 1]`` for nodes ``cos((j + 1/2) pi / n)``."""
    theta = (np.arange(n) + 0.5) * np.pi / n
    k = np.arange(1, n // 2 + 1)
    series = np.cos(2.0 * np.outer(theta, k)) / (4.0 * k * k - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * series.sum(axis=1))


def quadrature_weights(grid: ChartGrid) -> np.ndarray:
    """Node weights ``w`` such that ``sum(w * F)`` approximates ``int F dx``."""
    per_axis = []
    for axis in range(3):
        n = grid.dims[axis]
        if grid.kind is ChartKind.S3BAND and axis == 0:
            # int_0^{pi/2} F dr = 1/2 int_{-1}^{1} F / sin(2r) dx with x = cos 2r;
            # exact to roundoff when F / sin(2r) is smooth and even across both poles.
            r = grid.axis_nodes(0)
            per_axis.append(0.5 * fejer_weights(n) / np.sin(2.0 * r))
        else:
            per_axis.append(np.full(n, grid.lengths[axis] / n))
    return np.einsum("i,j,k->ijk", *per_axis)


def integrate(phi, g: MetricField) -> float:
    """Integral of ``phi`` against the Riemannian volume of ``g``."""
    values = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
    if isinstance(phi, ScalarField):
        _check_same_grid(phi.grid, g.grid)
    values = np.broadcast_to(values, g.grid.shape)
    return float(np.sum(quadrature_weights(g.grid) * values * g.sqrt_det))
