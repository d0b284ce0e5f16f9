"""Curvature of metric fields, the analytic metric catalog, and sigma_2 algebra.

The finite-difference engine works from first and second coordinate
derivatives of the metric; Ricci is assembled pointwise from them, so no
Christoffel symbol is ever differentiated numerically.  On the S3Band chart
the metric is first divided by the round-metric scale factors
``(1, sin r, cos r)`` (analytically differentiated) which keeps every
differenced quantity smooth across the coordinate poles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import expr as _expr
from .grid import (
    ChartGrid,
    ChartKind,
    GridError,
    MetricField,
    ScalarField,
    SymTensorField,
    diff,
    flat_metric,
    gradient,
    make_grid,
    second_partials,
)

CONDITION_LIMIT = 1e12


class CurvatureError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class ChristoffelField:
    """``values[..., k, i, j]`` is the symbol ``Gamma^k_{ij}``."""

    grid: ChartGrid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    """Christoffel symbols, Ricci tensor and scalar curvature of one metric.

    ``source`` is ``"engine"`` for finite-difference results and
    ``"catalog"`` for closed forms.
    """

    gamma: ChristoffelField
    ricci: SymTensorField
    scalar: ScalarField
    source: str = "engine"


@dataclass(frozen=True, eq=False)
class ConeSample:
    """Per-node spectral data of ``g^{-1} A`` (all fields are node arrays)."""

    eigenvalues: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    in_cone: np.ndarray
    cone_margin: np.ndarray

    @property
    def coverage(self) -> float:
        return float(np.mean(self.in_cone))


# -- parity and scale factors for the S3Band chart ----------------------------


def tensor_parity(indices, scaled: bool = False):
    """Reflection signs ``(low pole, high pole)`` for a coordinate component.

    A component picks up ``-1`` per ``r`` index.  When the component has been
    divided by the round scale factors, each ``theta`` index adds a sign at
    ``r = 0`` (where ``sin r`` is odd) and each ``phi`` index at ``r = pi/2``.
    """
    n_r = sum(1 for i in indices if i == 0)
    lo = n_r + (sum(1 for i in indices if i == 1) if scaled else 0)
    hi = n_r + (sum(1 for i in indices if i == 2) if scaled else 0)
    return (-1.0) ** lo, (-1.0) ** hi


def _pair_parity(scaled: bool):
    lo = np.empty((3, 3))
    hi = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            lo[i, j], hi[i, j] = tensor_parity((i, j), scaled)
    return lo, hi


VECTOR_PARITY = (np.array([-1.0, 1.0, 1.0]), np.array([-1.0, 1.0, 1.0]))


def _scale_factors(grid: ChartGrid):
    """``S_ij = s_i s_j`` and its first and second r-derivatives."""
    ones = np.ones(grid.shape)
    zeros = np.zeros(grid.shape)
    if grid.kind is not ChartKind.S3BAND:
        one = np.ones(grid.shape + (3, 3))
        return one, np.zeros_like(one), np.zeros_like(one)
    r = grid.coordinates()["r"]
    s = np.stack([ones, np.sin(r), np.cos(r)], axis=-1)
    ds = np.stack([zeros, np.cos(r), -np.sin(r)], axis=-1)
    dds = np.stack([zeros, -np.sin(r), -np.cos(r)], axis=-1)
    S = s[..., :, None] * s[..., None, :]
    dS = ds[..., :, None] * s[..., None, :] + s[..., :, None] * ds[..., None, :]
    ddS = (
        dds[..., :, None] * s[..., None, :]
        + 2.0 * ds[..., :, None] * ds[..., None, :]
        + s[..., :, None] * dds[..., None, :]
    )
    return S, dS, ddS


def metric_derivatives(g: MetricField):
    """First and second coordinate derivatives of the metric.

    Returns ``dg[..., m, i, j] = d_m g_ij`` and
    ``ddg[..., m, n, i, j] = d_m d_n g_ij``.
    """
    grid = g.grid
    S, dS, ddS = _scale_factors(grid)
    reduced = g.values / S
    parity = _pair_parity(scaled=True)
    d_red = np.stack([diff(reduced, grid, m, 1, parity) for m in range(3)], axis=-3)
    dd_red = np.zeros(grid.shape + (3, 3, 3, 3))
    for m in range(3):
        dd_red[..., m, m, :, :] = diff(reduced, grid, m, 2, parity)
        for n in range(m + 1, 3):
            mixed = diff(d_red[..., n, :, :], grid, m, 1, parity)
            dd_red[..., m, n, :, :] = mixed
            dd_red[..., n, m, :, :] = mixed

    dg = S[..., None, :, :] * d_red
    dg[..., 0, :, :] += dS * reduced
    ddg = S[..., None, None, :, :] * dd_red
    ddg[..., 0, 0, :, :] += ddS * reduced
    for n in range(3):
        ddg[..., 0, n, :, :] += dS * d_red[..., n, :, :]
        ddg[..., n, 0, :, :] += dS * d_red[..., n, :, :]
    return dg, ddg


def christoffel_from_derivatives(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    first = 0.5 * (
        np.einsum("...ijl->...lij", dg)
        + np.einsum("...jil->...lij", dg)
        - dg
    )
    return np.einsum("...kl,...lij->...kij", ginv, first)


def _guard(g: MetricField):
    cond = g.condition
    if np.any(cond > CONDITION_LIMIT):
        idx = np.unravel_index(np.argmax(cond), g.grid.shape)
        raise CurvatureError(
            f"metric too ill-conditioned to invert at node {tuple(int(i) for i in idx)} "
            f"(condition number {cond[idx]:.3g})"
        )


def christoffel(g: MetricField) -> ChristoffelField:
    """Levi-Civita symbols by finite differences of the metric."""
    _guard(g)
    dg, _ = metric_derivatives(g)
    return ChristoffelField(g.grid, christoffel_from_derivatives(g.inverse, dg))


def ricci_from_derivatives(ginv, dg, ddg, gamma):
    first_d = 0.5 * (
        np.einsum("...mijl->...mlij", ddg)
        + np.einsum("...mjil->...mlij", ddg)
        - ddg
    )
    # d_m Gamma^k_ij = -g^{ka} d_m g_ab Gamma^b_ij + g^{kl} d_m [ij, l]
    div_gamma = -np.einsum("...ka,...kab,...bij->...ij", ginv, dg, gamma, optimize=True) + np.einsum(
        "...kl,...klij->...ij", ginv, first_d
    )
    grad_trace = -np.einsum("...ka,...jab,...bik->...ij", ginv, dg, gamma, optimize=True) + np.einsum(
        "...kl,...jlik->...ij", ginv, first_d
    )
    quad = np.einsum("...kkl,...lij->...ij", gamma, gamma) - np.einsum(
        "...kjl,...lik->...ij", gamma, gamma
    )
    return div_gamma - grad_trace + quad


def curvature_of(g: MetricField) -> CurvatureBundle:
    """Christoffel symbols, Ricci tensor and scalar curvature by finite differences."""
    _guard(g)
    dg, ddg = metric_derivatives(g)
    ginv = g.inverse
    gamma = christoffel_from_derivatives(ginv, dg)
    ric = ricci_from_derivatives(ginv, dg, ddg, gamma)
    ricci = SymTensorField(g.grid, ric)
    scalar = ScalarField(g.grid, np.einsum("...ij,...ij->...", ginv, ricci.values))
    return CurvatureBundle(ChristoffelField(g.grid, gamma), ricci, scalar)


# -- scalar calculus against a metric -----------------------------------------


def raise_both(T: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    return np.einsum("...ia,...ab,...bj->...ij", ginv, T, ginv, optimize=True)


def contract(S: np.ndarray, T: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Full contraction ``<S, T>_g = g^{ia} g^{jb} S_ij T_ab``."""
    return np.einsum("...ia,...jb,...ij,...ab->...", ginv, ginv, S, T, optimize=True)


def covariant_hessian(u: np.ndarray, grid: ChartGrid, gamma: np.ndarray, du=None):
    """``nabla^2 u`` and the coordinate gradient of a scalar (even parity)."""
    if du is None:
        du = gradient(u, grid)
    hess = second_partials(u, grid) - np.einsum("...kij,...k->...ij", gamma, du)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2)), du


def laplacian(u: np.ndarray, g: MetricField, gamma: np.ndarray) -> np.ndarray:
    hess, _ = covariant_hessian(u, g.grid, gamma)
    return np.einsum("...ij,...ij->...", g.inverse, hess)


def divergence(X: np.ndarray, g: MetricField, gamma: np.ndarray) -> np.ndarray:
    """``div X = d_i X^i + Gamma^k_{ki} X^i`` for a vector field ``X[..., i]``."""
    grid = g.grid
    total = np.zeros(grid.shape)
    for i in range(3):
        lo, hi = VECTOR_PARITY
        total += diff(X[..., i], grid, i, 1, (lo[i], hi[i]))
    return total + np.einsum("...kki,...i->...", gamma, X)


# -- analytic catalog -----------------------------------------------------------


def _diag_metric(grid, diag, d_diag, offdiag=None, d_offdiag=None):
    g = np.zeros(grid.shape + (3, 3))
    dg = np.zeros(grid.shape + (3, 3, 3))
    for i in range(3):
        g[..., i, i] = diag[i]
        dg[..., 0, i, i] = d_diag[i]
    if offdiag is not None:
        for (i, j), val in offdiag.items():
            g[..., i, j] = g[..., j, i] = val
            dg[..., 0, i, j] = dg[..., 0, j, i] = d_offdiag[(i, j)]
    return g, dg


def _default_grid(name):
    if name == "flat_torus":
        return make_grid("Torus3", [16, 16, 16])
    return make_grid("S3Band", [64, 1, 1])


def _round_s3(grid, radius=1.0):
    radius = float(radius)
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    r = grid.coordinates()["r"]
    rho2 = radius * radius
    values, dg = _diag_metric(
        grid,
        [rho2 * np.ones_like(r), rho2 * np.sin(r) ** 2, rho2 * np.cos(r) ** 2],
        [np.zeros_like(r), rho2 * np.sin(2 * r), -rho2 * np.sin(2 * r)],
    )
    g = MetricField.from_values(grid, values)
    gamma = christoffel_from_derivatives(g.inverse, dg)
    ricci = SymTensorField(grid, (2.0 / rho2) * values)
    scalar = ScalarField.constant(grid, 6.0 / rho2)
    return g, CurvatureBundle(ChristoffelField(grid, gamma), ricci, scalar)


def _berger_s3(grid, epsilon=1.0):
    """Round unit sphere with the Hopf fiber length scaled by ``epsilon``.

    ``g = g_round + (epsilon^2 - 1) eta (x) eta`` with the Hopf form
    ``eta = sin^2 r dtheta + cos^2 r dphi``.  Ricci in a left-invariant
    orthonormal frame is ``diag(2 eps^2, 4 - 2 eps^2, 4 - 2 eps^2)``.
    """
    eps = float(epsilon)
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    k = eps * eps - 1.0
    r = grid.coordinates()["r"]
    s2, c2 = np.sin(r) ** 2, np.cos(r) ** 2
    values, dg = _diag_metric(
        grid,
        [np.ones_like(r), s2 + k * s2 * s2, c2 + k * c2 * c2],
        [
            np.zeros_like(r),
            np.sin(2 * r) + 4 * k * np.sin(r) ** 3 * np.cos(r),
            -np.sin(2 * r) - 4 * k * np.cos(r) ** 3 * np.sin(r),
        ],
        offdiag={(1, 2): k * s2 * c2},
        d_offdiag={(1, 2): 0.5 * k * np.sin(4 * r)},
    )
    g = MetricField.from_values(grid, values)
    gamma = christoffel_from_derivatives(g.inverse, dg)
    eta = np.zeros(grid.shape + (3,))
    eta[..., 1] = s2
    eta[..., 2] = c2
    eta_eta = eta[..., :, None] * eta[..., None, :]
    ricci = SymTensorField(grid, (4.0 - 2.0 * eps**2) * values + 4.0 * k * eps**2 * eta_eta)
    scalar = ScalarField.constant(grid, 8.0 - 2.0 * eps**2)
    return g, CurvatureBundle(ChristoffelField(grid, gamma), ricci, scalar)


def _conformally_round_s3(grid, w="0"):
    """``e^{-2w} g_round`` with curvature pushed through the conformal laws."""
    if isinstance(w, ScalarField):
        w_field = w
    else:
        w_field = _expr.evaluate(str(w), grid)
    g0, b0 = _round_s3(grid, 1.0)
    wv = w_field.values
    hess, dw = covariant_hessian(wv, grid, b0.gamma.values)
    ginv0 = g0.inverse
    grad_sq = np.einsum("...ij,...i,...j->...", ginv0, dw, dw)
    lap = np.einsum("...ij,...ij->...", ginv0, hess)
    a1 = 0.5 * g0.values
    a1_new = a1 + hess + dw[..., :, None] * dw[..., None, :] - 0.5 * grad_sq[..., None, None] * g0.values
    conf = np.exp(-2.0 * wv)[..., None, None]
    g = MetricField.from_values(grid, conf * g0.values)
    scalar = np.exp(2.0 * wv) * (6.0 + 4.0 * lap - 2.0 * grad_sq)
    ricci = a1_new + 0.25 * scalar[..., None, None] * g.values
    # g = e^{2 psi} g0 with psi = -w
    dpsi = -dw
    eye = np.eye(3)
    gamma = (
        b0.gamma.values
        + np.einsum("ki,...j->...kij", eye, dpsi)
        + np.einsum("kj,...i->...kij", eye, dpsi)
        - np.einsum("...ij,...kl,...l->...kij", g0.values, ginv0, dpsi)
    )
    return g, CurvatureBundle(
        ChristoffelField(grid, gamma), SymTensorField(grid, ricci), ScalarField(grid, scalar)
    )


def _flat_torus(grid):
    zero3 = np.zeros(grid.shape + (3, 3, 3))
    return flat_metric(grid), CurvatureBundle(
        ChristoffelField(grid, zero3),
        SymTensorField(grid, np.zeros(grid.shape + (3, 3))),
        ScalarField.constant(grid, 0.0),
    )


CATALOG = {
    "flat_torus": (ChartKind.TORUS3, _flat_torus),
    "round_s3": (ChartKind.S3BAND, _round_s3),
    "berger_s3": (ChartKind.S3BAND, _berger_s3),
    "conformally_round_s3": (ChartKind.S3BAND, _conformally_round_s3),
}


def catalog(name: str, params: dict | None = None, grid: ChartGrid | None = None):
    """Catalog metric and its exact (or transformation-law) curvature.

    ``round_s3(radius)``, ``berger_s3(epsilon)`` and
    ``conformally_round_s3(w)`` live on S3Band charts; ``flat_torus`` on a
    Torus3 chart.
    """
    if name not in CATALOG:
        raise KeyError(f"unknown catalog metric {name!r}; choose from {sorted(CATALOG)}")
    kind, builder = CATALOG[name]
    grid = grid if grid is not None else _default_grid(name)
    if grid.kind is not kind:
        raise GridError(f"{name} needs a {kind.value} chart, got {grid.kind.value}")
    try:
        g, bundle = builder(grid, **(params or {}))
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name}: {exc}") from None
    return g, replace(bundle, source="catalog")


# -- sigma algebra ----------------------------------------------------------------


def schouten_t(bundle: CurvatureBundle, g: MetricField, t: float) -> SymTensorField:
    """``A^t = Ric - (t/4) R g``."""
    return SymTensorField(
        g.grid, bundle.ricci.values - 0.25 * t * bundle.scalar.values[..., None, None] * g.values
    )


def mixed(A, g: MetricField) -> np.ndarray:
    """The endomorphism ``g^{-1} A`` as node matrices."""
    values = A.values if isinstance(A, SymTensorField) else A
    return np.einsum("...ik,...kj->...ij", g.inverse, values)


def sigma1_sigma2(M: np.ndarray):
    """Elementary symmetric functions of an endomorphism via traces."""
    s1 = np.trace(M, axis1=-2, axis2=-1)
    s2 = 0.5 * (s1 * s1 - np.einsum("...ij,...ji->...", M, M))
    return s1, s2


def sigma_from_eigenvalues(lam: np.ndarray):
    lam = np.asarray(lam, dtype=float)
    s1 = lam.sum(axis=-1)
    s2 = lam[..., 0] * lam[..., 1] + lam[..., 0] * lam[..., 2] + lam[..., 1] * lam[..., 2]
    return s1, s2


def in_gamma2_plus(lam) -> np.ndarray:
    """Strict membership of eigenvalue triples in the cone ``{sigma_1 > 0, sigma_2 > 0}``."""
    s1, s2 = sigma_from_eigenvalues(lam)
    return (s1 > 0) & (s2 > 0)


def generalized_eigenvalues(A: np.ndarray, gv: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``g^{-1} A`` through the Cholesky congruence ``L^{-1} A L^{-T}``."""
    try:
        L = np.linalg.cholesky(gv)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(gv)[..., 0]
        idx = np.unravel_index(np.argmin(eig), eig.shape)
        raise CurvatureError(
            f"Cholesky factorization failed at node {tuple(int(i) for i in idx)}"
        ) from None
    X = np.linalg.solve(L, A)
    B = np.linalg.solve(L, np.swapaxes(X, -1, -2))
    B = 0.5 * (B + np.swapaxes(B, -1, -2))
    return np.linalg.eigvalsh(B)


def sigma_spectrum(A: SymTensorField, g: MetricField) -> ConeSample:
    lam = generalized_eigenvalues(A.values, g.values)
    s1, s2 = sigma_from_eigenvalues(lam)
    return ConeSample(lam, s1, s2, (s1 > 0) & (s2 > 0), np.minimum(s1, s2))


def sigma2_via_norms(bundle: CurvatureBundle, g: MetricField) -> ScalarField:
    """``sigma_2(g^{-1} A^1) = -|Ric|^2 / 2 + 3 R^2 / 16``."""
    ric = bundle.ricci.values
    R = bundle.scalar.values
    return ScalarField(g.grid, -0.5 * contract(ric, ric, g.inverse) + (3.0 / 16.0) * R * R)


def newton_transform(A: SymTensorField, g: MetricField) -> SymTensorField:
    """First Newton transformation ``sigma_1(A) I - A``, lowered with ``g``."""
    s1 = np.einsum("...ij,...ij->...", g.inverse, A.values)
    return SymTensorField(g.grid, s1[..., None, None] * g.values - A.values)


def l_t_operator_coeff(A: SymTensorField, g: MetricField, t: float) -> SymTensorField:
    """``T_1(A) + (1 - t) sigma_1(T_1(A)) I``, lowered with ``g``.

    In dimension three ``sigma_1(T_1(A)) = 2 sigma_1(A)``.
    """
    s1 = np.einsum("...ij,...ij->...", g.inverse, A.values)
    T1 = s1[..., None, None] * g.values - A.values
    return SymTensorField(g.grid, T1 + (1.0 - t) * (2.0 * s1)[..., None, None] * g.values)


def q_curvature(bundle: CurvatureBundle, g: MetricField) -> ScalarField:
    """``Q = -Delta R / 4 - 2 |Ric|^2 + 23 R^2 / 32``."""
    R = bundle.scalar.values
    ric = bundle.ricci.values
    lap_R = laplacian(R, g, bundle.gamma.values)
    return ScalarField(
        g.grid, -0.25 * lap_R - 2.0 * contract(ric, ric, g.inverse) + (23.0 / 32.0) * R * R
    )


def paneitz_apply(g: MetricField, bundle: CurvatureBundle, phi: ScalarField, q=None) -> ScalarField:
    """Apply the three-dimensional Paneitz operator to ``phi``.

    ``P phi = Delta^2 phi - div((5/4) R g - 4 Ric)(grad phi) - Q phi / 2``.
    This sign of the middle term is the one for which
    ``P_{rho^-4 g} phi = rho^7 P_g(rho phi)`` holds.
    """
    gamma = bundle.gamma.values
    ginv = g.inverse
    pv = phi.values
    lap = laplacian(pv, g, gamma)
    bilap = laplacian(lap, g, gamma)
    coeff = 1.25 * bundle.scalar.values[..., None, None] * g.values - 4.0 * bundle.ricci.values
    dphi = gradient(pv, g.grid)
    X = np.einsum("...ij,...j->...i", raise_both(coeff, ginv), dphi)
    if q is None:
        q = q_curvature(bundle, g)
    qv = q.values if isinstance(q, ScalarField) else q
    return ScalarField(g.grid, bilap - divergence(X, g, gamma) - 0.5 * qv * pv)
