"""Conformal changes ``g~ = e^{-2u} g``, their transformation laws, and the
integral functionals built on them (total sigma_2, the ``i`` functional and
its sampled infimum, the Yamabe quotient, the pinching margin ``mu_t``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import expr as _expr
from .curvature import (
    CurvatureBundle,
    christoffel,
    covariant_hessian,
    curvature_of,
    mixed,
    schouten_t,
    sigma1_sigma2,
)
from .grid import MetricField, ScalarField, SymTensorField, integrate

log = logging.getLogger(__name__)

U_LIMIT = 50.0
T_MAX = 2.0 / 3.0


class ConformalFactor:
    """A conformal factor ``u`` with its derivatives against a background metric.

    ``du`` is the coordinate gradient, ``hessian`` the covariant Hessian,
    ``laplacian`` its trace and ``grad_sq = |grad u|_g^2``.
    """

    def __init__(self, u, g: MetricField, gamma=None):
        if not isinstance(u, ScalarField):
            u = ScalarField(g.grid, u)
        if u.grid != g.grid:
            raise ValueError("conformal factor and metric live on different grids")
        if gamma is None:
            gamma = christoffel(g)
        self.u = u
        self.g = g
        self.gamma = gamma
        gamma_v = gamma.values if hasattr(gamma, "values") else gamma
        self.hessian, self.du = covariant_hessian(u.values, g.grid, gamma_v)
        ginv = g.inverse
        self.laplacian = np.einsum("...ij,...ij->...", ginv, self.hessian)
        self.grad_sq = np.einsum("...ij,...i,...j->...", ginv, self.du, self.du)

    @classmethod
    def constant(cls, g: MetricField, value: float, gamma=None) -> "ConformalFactor":
        return cls(ScalarField.constant(g.grid, value), g, gamma)

    def with_values(self, values) -> "ConformalFactor":
        return ConformalFactor(ScalarField(self.g.grid, values), self.g, self.gamma)

    @property
    def values(self) -> np.ndarray:
        return self.u.values

    @property
    def grad_sup(self) -> float:
        return float(np.sqrt(np.max(self.grad_sq)))


def _as_factor(u, g, bundle=None) -> ConformalFactor:
    if isinstance(u, ConformalFactor):
        return u
    gamma = bundle.gamma if bundle is not None else None
    if isinstance(u, str):
        u = _expr.evaluate(u, g.grid)
    return ConformalFactor(u, g, gamma)


def conformal_metric(g: MetricField, u) -> MetricField:
    """``e^{-2u} g``."""
    uv = u.values if hasattr(u, "values") else np.asarray(u, dtype=float)
    uv = np.broadcast_to(uv, g.grid.shape)
    if np.any(np.abs(uv) > U_LIMIT):
        raise OverflowError(f"conformal factor exceeds +/-{U_LIMIT}; e^(-2u) would overflow")
    return MetricField.from_values(g.grid, np.exp(-2.0 * uv)[..., None, None] * g.values)


def transform_schouten_t(A_t: SymTensorField, u: ConformalFactor, g: MetricField, t: float) -> SymTensorField:
    """``A^t`` of ``e^{-2u} g`` from ``A^t`` of ``g``:

    ``A^t + hess u + (1 - t) lap(u) g + du du - (2 - t)/2 |du|^2 g``.
    """
    du = u.du
    iso = (1.0 - t) * u.laplacian - 0.5 * (2.0 - t) * u.grad_sq
    values = A_t.values + u.hessian + du[..., :, None] * du[..., None, :] + iso[..., None, None] * g.values
    return SymTensorField(g.grid, values)


def transform_scalar(R: ScalarField, u: ConformalFactor) -> ScalarField:
    """Scalar curvature of ``e^{-2u} g``: ``e^{2u} (R + 4 lap u - 2 |du|^2)``."""
    return ScalarField(R.grid, np.exp(2.0 * u.values) * (R.values + 4.0 * u.laplacian - 2.0 * u.grad_sq))


def _bundle(g, bundle):
    return bundle if bundle is not None else curvature_of(g)


def sigma2_field(g: MetricField, bundle: CurvatureBundle | None = None, t: float = 1.0) -> np.ndarray:
    b = _bundle(g, bundle)
    _, s2 = sigma1_sigma2(mixed(schouten_t(b, g, t), g))
    return s2


def total_sigma2(g: MetricField, bundle: CurvatureBundle | None = None) -> float:
    """``int sigma_2(g^{-1} A^1) dV``."""
    return integrate(sigma2_field(g, bundle), g)


def i_functional(g: MetricField, phi, bundle: CurvatureBundle | None = None) -> float:
    """``i(g') = int R_{g'}^2 e^{-phi} dV_{g'}`` for ``g' = e^{-2 phi} g``."""
    b = _bundle(g, bundle)
    phi = _as_factor(phi, g, b)
    R_new = transform_scalar(b.scalar, phi)
    # dV_{g'} = e^{-3 phi} dV_g
    weight = np.exp(-4.0 * phi.values)
    return integrate(R_new.values**2 * weight, g)


@dataclass
class ISample:
    label: str
    value: float
    grad_sup: float


def _label(phi, k):
    if isinstance(phi, str):
        return phi
    if isinstance(phi, tuple):
        return str(phi[0])
    return f"candidate[{k}]"


def estimate_I(g: MetricField, candidate_phis, grad_cap: float = 1.0, bundle=None):
    """Sampled upper bound on ``inf i(e^{-2 phi} g)`` over ``|grad phi| <= grad_cap``.

    Candidates are expression strings, scalar fields or ``(label, field)``
    pairs; the zero function is always included.  Returns
    ``(estimate, samples, warnings)``.
    """
    b = _bundle(g, bundle)
    items = [("0", ScalarField.constant(g.grid, 0.0))]
    for k, phi in enumerate(candidate_phis):
        label = _label(phi, k)
        field_ = phi[1] if isinstance(phi, tuple) else phi
        if isinstance(field_, str):
            field_ = _expr.evaluate(field_, g.grid)
        if label.strip() in ("0", "0.0") and np.all(field_.values == 0):
            continue
        items.append((label, field_))
    samples, warnings = [], []
    for label, phi in items:
        factor = ConformalFactor(phi, g, b.gamma)
        if factor.grad_sup > grad_cap:
            msg = f"candidate {label!r} skipped: sup |grad phi| = {factor.grad_sup:.4g} > grad_cap {grad_cap:g}"
            log.warning(msg)
            warnings.append(msg)
            continue
        samples.append(ISample(label, i_functional(g, factor, b), factor.grad_sup))
    if not samples:
        raise ValueError("no admissible candidate for the I estimate")
    return min(s.value for s in samples), samples, warnings


def yamabe_quotient(g: MetricField, bundle: CurvatureBundle | None = None) -> float:
    """``int R dV / Vol^{1/3}`` for this metric (not the conformal infimum)."""
    b = _bundle(g, bundle)
    vol = integrate(np.ones(g.grid.shape), g)
    return integrate(b.scalar, g) / vol ** (1.0 / 3.0)


@dataclass
class PinchingReport:
    total_sigma2: float
    i_samples: list
    I_estimate: float
    yamabe_quotient: float
    mu_t: float
    t: float
    hypothesis_met: bool
    warnings: list = field(default_factory=list)
    I_is_upper_bound: bool = True

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "total_sigma2": self.total_sigma2,
            "I_estimate": self.I_estimate,
            "I_is_upper_bound": self.I_is_upper_bound,
            "i_samples": [
                {"phi": s.label, "i": s.value, "grad_sup": s.grad_sup} for s in self.i_samples
            ],
            "yamabe_quotient": self.yamabe_quotient,
            "mu_t": self.mu_t,
            "hypothesis_met": self.hypothesis_met,
            "warnings": list(self.warnings),
        }


def pinching_coefficient(t: float) -> float:
    return (7.0 / 10.0 - t) / 24.0


def pinching_margin(g: MetricField, t: float, candidates=(), grad_cap: float = 1.0, bundle=None) -> PinchingReport:
    """``mu_t = int sigma_2 + (7/10 - t)/24 * I_estimate`` for ``t <= 2/3``."""
    if t > T_MAX + 1e-15:
        raise ValueError(f"t = {t} exceeds 2/3")
    b = _bundle(g, bundle)
    s2 = total_sigma2(g, b)
    I_est, samples, warnings = estimate_I(g, candidates, grad_cap, b)
    mu = s2 + pinching_coefficient(t) * I_est
    return PinchingReport(
        total_sigma2=s2,
        i_samples=samples,
        I_estimate=I_est,
        yamabe_quotient=yamabe_quotient(g, b),
        mu_t=mu,
        t=t,
        hypothesis_met=bool(mu > 0),
        warnings=warnings,
    )
