"""Oracle suites for the algebraic and integral identities used by the theory.

Every check returns an :class:`IdentityReport`.  Discretization-sensitive
checks compare two independently computed sides whose gap should shrink like
``h^2``; the purely algebraic ones hold to rounding error on random samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conformal import ConformalFactor, conformal_metric, transform_scalar, transform_schouten_t
from .curvature import (
    CurvatureBundle,
    contract,
    curvature_of,
    generalized_eigenvalues,
    laplacian,
    mixed,
    q_curvature,
    schouten_t,
    sigma1_sigma2,
    sigma2_via_norms,
    sigma_from_eigenvalues,
)
from .grid import ChartKind, MetricField, ScalarField, integrate

ABSOLUTE = "abs"
RELATIVE = "rel"


@dataclass
class IdentityReport:
    name: str
    lhs: float
    rhs: float
    abs_gap: float
    rel_gap: float
    tolerance: float
    passed: bool
    grid_h: float = 0.0
    criterion: str = RELATIVE
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_gap": self.abs_gap,
            "rel_gap": self.rel_gap,
            "tolerance": self.tolerance,
            "criterion": self.criterion,
            "pass": self.passed,
            "grid_h": self.grid_h,
            "details": _jsonable(self.details),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _report(name, lhs, rhs, scale, tolerance, criterion, h=0.0, details=None) -> IdentityReport:
    """Build a report; ``scale`` is the magnitude the relative gap refers to."""
    abs_gap = float(abs(lhs - rhs))
    scale = float(scale)
    rel_gap = abs_gap / scale if scale > 0 else (0.0 if abs_gap == 0 else float("inf"))
    gap = abs_gap if criterion == ABSOLUTE else rel_gap
    return IdentityReport(name, float(lhs), float(rhs), abs_gap, rel_gap, float(tolerance),
                          bool(gap <= tolerance), float(h), criterion, details or {})


def _node(arr) -> tuple:
    return tuple(int(i) for i in np.unravel_index(np.argmax(arr), arr.shape))


def _bundle(g, bundle):
    return bundle if bundle is not None else curvature_of(g)


def _engine_bundle(g, bundle):
    if bundle is not None and bundle.source == "engine":
        return bundle
    return curvature_of(g)


def _factor(g, u, bundle) -> ConformalFactor:
    if isinstance(u, ConformalFactor):
        return u
    return ConformalFactor(u, g, bundle.gamma)


# -- integral identities ---------------------------------------------------------


def lemma51_terms(g: MetricField, u, bundle: CurvatureBundle | None = None):
    """Both sides of the integral transformation of ``sigma_2`` under ``g~ = e^{-2u} g``.

    The left side recomputes the curvature of ``g~`` from scratch; the right
    side is the sum of five background integrals, using the engine's
    curvature of ``g`` so that both sides share one discretization (a catalog
    bundle is replaced).  Returns ``(lhs, rhs_terms)``.
    """
    b = _engine_bundle(g, bundle)
    u = _factor(g, u, b)
    g_new = conformal_metric(g, u)
    b_new = curvature_of(g_new)
    _, s2_new = sigma1_sigma2(mixed(schouten_t(b_new, g_new, 1.0), g_new))
    lhs = integrate(s2_new * np.exp(-4.0 * u.values), g)

    A1 = schouten_t(b, g, 1.0).values
    _, s2 = sigma1_sigma2(mixed(A1, g))
    ginv = g.inverse
    grad_up = np.einsum("...ij,...j->...i", ginv, u.du)
    A_du = np.einsum("...ij,...i,...j->...", A1, grad_up, grad_up)
    terms = {
        "sigma2": integrate(s2, g),
        "R_grad_sq": integrate(b.scalar.values * u.grad_sq, g) / 8.0,
        "grad_quartic": -integrate(u.grad_sq**2, g) / 4.0,
        "lap_grad_sq": integrate(u.laplacian * u.grad_sq, g) / 2.0,
        "schouten_grad": -integrate(A_du, g) / 2.0,
    }
    return lhs, terms


def check_lemma51(g: MetricField, u, bundle: CurvatureBundle | None = None,
                  tolerance: float | None = None, constant: float = 10.0) -> IdentityReport:
    """Relative gap against the largest right-hand term; default tolerance ``constant * h^2``."""
    lhs, terms = lemma51_terms(g, u, bundle)
    rhs = sum(terms.values())
    scale = max(abs(v) for v in terms.values())
    h = g.grid.h
    tol = constant * h * h if tolerance is None else tolerance
    return _report("lemma51", lhs, rhs, scale, tol, RELATIVE, h, {"terms": terms})


def check_bochner(g: MetricField, u, bundle: CurvatureBundle | None = None,
                  tolerance: float | None = None, constant: float = 2.0) -> IdentityReport:
    """``int |hess u|^2 + int Ric(du, du) = int (lap u)^2``."""
    b = _bundle(g, bundle)
    u = _factor(g, u, b)
    ginv = g.inverse
    hess_sq = integrate(contract(u.hessian, u.hessian, ginv), g)
    grad_up = np.einsum("...ij,...j->...i", ginv, u.du)
    ric = integrate(np.einsum("...ij,...i,...j->...", b.ricci.values, grad_up, grad_up), g)
    lap_sq = integrate(u.laplacian**2, g)
    scale = max(abs(hess_sq), abs(ric), abs(lap_sq))
    h = g.grid.h
    tol = constant * h * h if tolerance is None else tolerance
    return _report("bochner", hess_sq + ric, lap_sq, scale, tol, RELATIVE, h,
                   {"hessian_sq": hess_sq, "ricci_term": ric, "laplacian_sq": lap_sq})


# -- exact algebra ------------------------------------------------------------------


P2_COEFFS = (3.0 / 16.0, -11.0 / 24.0, 17.0 / 60.0)
P2_VERTEX = 11.0 / 9.0


def p2(t):
    """The quadratic remainder ``3t^2/16 - 11t/24 + 17/60``."""
    a, b, c = P2_COEFFS
    t = np.asarray(t, dtype=float)
    return (a * t + b) * t + c


def check_p2(tsamples, tolerance: float = 1e-15) -> IdentityReport:
    """``(1-t)(5-3t)/16 = (7/10 - t)/24 + P2(t)`` and ``P2 > 0`` everywhere."""
    t = np.asarray(tsamples, dtype=float)
    lhs = (1.0 - t) * (5.0 - 3.0 * t) / 16.0
    rhs = (0.7 - t) / 24.0 + p2(t)
    gaps = np.abs(lhs - rhs)
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1.0)
    a, b, c = P2_COEFFS
    disc = b * b - 4.0 * a * c
    k = int(np.argmax(gaps))
    rel = float(np.max(gaps / scale))
    min_p2 = float(np.min(p2(t)))
    passed = rel <= tolerance and disc < 0 and min_p2 > 0
    return IdentityReport(
        "p2", float(lhs[k]), float(rhs[k]), float(gaps[k]), rel, tolerance, bool(passed), 0.0, RELATIVE,
        {"discriminant": disc, "vertex": P2_VERTEX, "vertex_value": float(p2(P2_VERTEX)),
         "min_sample_value": min_p2, "samples": int(t.size), "worst_sample": float(t[k])},
    )


def _sym(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def check_sigma2_shift(A1, g, t, tolerance: float = 1e-12) -> IdentityReport:
    """``sigma_2(A^t) = sigma_2(A^1) + (1-t)(5-3t) sigma_1(A^1)^2`` with ``A^t = A^1 + (1-t) sigma_1(A^1) g``.

    ``A1`` and ``g`` are node arrays ``(..., 3, 3)`` or field objects; ``t``
    may be a scalar or broadcast against the nodes.
    """
    A1 = _sym(A1.values if hasattr(A1, "values") else A1)
    gv = _sym(g.values if hasattr(g, "values") else g)
    t = np.asarray(t, dtype=float)
    ginv = np.linalg.inv(gv)
    M1 = np.einsum("...ik,...kj->...ij", ginv, A1)
    s1, s2 = sigma1_sigma2(M1)
    At = A1 + ((1.0 - t) * s1)[..., None, None] * gv
    _, s2t = sigma1_sigma2(np.einsum("...ik,...kj->...ij", ginv, At))
    shift = (1.0 - t) * (5.0 - 3.0 * t) * s1**2
    rhs = s2 + shift
    scale = np.maximum.reduce([np.abs(s2t), np.abs(s2), np.abs(shift), np.full(s2.shape, 1e-300)])
    rel = np.abs(s2t - rhs) / scale
    k = np.unravel_index(np.argmax(rel), rel.shape)
    return IdentityReport(
        "sigma2_shift", float(s2t[k]), float(rhs[k]), float(np.abs(s2t - rhs)[k]), float(rel[k]),
        tolerance, bool(np.max(rel) <= tolerance), 0.0, RELATIVE,
        {"worst_node": tuple(int(i) for i in k), "samples": int(rel.size)},
    )


def sigma2_dual(ricci, scalar, g, tolerance: float = 1e-12) -> IdentityReport:
    """``sigma_2(g^{-1} A^1)`` from eigenvalues versus ``-|Ric|^2/2 + 3R^2/16``.

    ``scalar`` may be None, in which case ``R = tr_g Ric``.
    """
    ric = _sym(ricci.values if hasattr(ricci, "values") else ricci)
    gv = _sym(g.values if hasattr(g, "values") else g)
    ginv = np.linalg.inv(gv)
    R = (np.einsum("...ij,...ij->...", ginv, ric) if scalar is None
         else np.asarray(scalar.values if hasattr(scalar, "values") else scalar, dtype=float))
    A1 = ric - 0.25 * R[..., None, None] * gv
    lam = generalized_eigenvalues(A1, gv)
    _, s2_eig = sigma_from_eigenvalues(lam)
    norm_sq = contract(ric, ric, ginv)
    s2_norm = -0.5 * norm_sq + (3.0 / 16.0) * R * R
    scale = np.maximum(np.maximum(0.5 * norm_sq, (3.0 / 16.0) * R * R), 1e-300)
    rel = np.abs(s2_eig - s2_norm) / scale
    k = np.unravel_index(np.argmax(rel), rel.shape)
    return IdentityReport(
        "sigma2_dual", float(s2_eig[k]), float(s2_norm[k]), float(np.abs(s2_eig - s2_norm)[k]),
        float(rel[k]), tolerance, bool(np.max(rel) <= tolerance), 0.0, RELATIVE,
        {"worst_node": tuple(int(i) for i in k), "samples": int(rel.size)},
    )


def sample_cone(n: int, rng: np.random.Generator, scale: float = 3.0) -> np.ndarray:
    """``n`` eigenvalue triples drawn uniformly from a box and kept if strictly in the cone."""
    out = []
    while sum(len(o) for o in out) < n:
        lam = rng.uniform(-scale, scale, size=(2 * n, 3))
        s1, s2 = sigma_from_eigenvalues(lam)
        out.append(lam[(s1 > 0) & (s2 > 0)])
    return np.concatenate(out)[:n]


def check_cone_inequalities(samples, rng: np.random.Generator | None = None,
                            tolerance: float = 0.0) -> IdentityReport:
    """Newton's inequality and the two matrix inequalities on cone samples.

    Each sample triple is turned into a random symmetric matrix with that
    spectrum relative to a random metric, so the matrix checks go through
    generalized eigenvalues rather than the diagonal shortcut.  ``lhs`` is
    the number of violations, ``rhs`` is zero.
    """
    lam = np.asarray(samples, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    n = lam.shape[0]
    s1, s2 = sigma_from_eigenvalues(lam)
    newton_gap = s1 - np.sqrt(3.0 * np.maximum(s2, 0.0))
    newton_bad = newton_gap < -tolerance * np.abs(s1)

    # A = L Q diag(lam) Q^T L^T is congruent to diag(lam) for g = L L^T
    Q, _ = np.linalg.qr(rng.normal(size=(n, 3, 3)))
    L = np.tril(rng.normal(size=(n, 3, 3)), -1) + np.eye(3) * rng.uniform(0.5, 2.0, size=(n, 1, 3))
    gv = L @ np.swapaxes(L, -1, -2)
    A = L @ Q @ (lam[:, :, None] * np.swapaxes(Q, -1, -2)) @ np.swapaxes(L, -1, -2)
    A = _sym(A)
    upper = generalized_eigenvalues(-A + s1[:, None, None] * gv, gv)[:, 0]
    lower = generalized_eigenvalues(A + (s1 / 3.0)[:, None, None] * gv, gv)[:, 0]
    upper_bad = upper <= 0
    lower_bad = lower <= 0
    violations = int(np.sum(newton_bad | upper_bad | lower_bad))
    return IdentityReport(
        "cone_inequalities", float(violations), 0.0, float(violations), float(violations) / max(n, 1),
        0.0, violations == 0, 0.0, ABSOLUTE,
        {"samples": n, "newton_violations": int(newton_bad.sum()),
         "upper_violations": int(upper_bad.sum()), "lower_violations": int(lower_bad.sum()),
         "min_newton_gap": float(newton_gap.min()), "min_upper_eig": float(upper.min()),
         "min_lower_eig": float(lower.min())},
    )


def check_lemma53(g: MetricField, u, t: float, bundle: CurvatureBundle | None = None) -> IdentityReport:
    """Pointwise ``A^1_{g~} < (3 - 2t) sigma_1(g~^{-1} A^1_{g~}) g~`` when ``A^t_{g~}`` is in the cone.

    Nodes where ``A^t_{g~}`` is outside the cone are skipped and counted.
    """
    b = _bundle(g, bundle)
    u = _factor(g, u, b)
    g_new = conformal_metric(g, u)
    A1 = transform_schouten_t(schouten_t(b, g, 1.0), u, g, 1.0).values
    At = transform_schouten_t(schouten_t(b, g, t), u, g, t).values
    s1t, s2t = sigma1_sigma2(mixed(At, g_new))
    in_cone = (s1t > 0) & (s2t > 0)
    s1 = np.einsum("...ij,...ij->...", g_new.inverse, A1)
    margin = generalized_eigenvalues((3.0 - 2.0 * t) * s1[..., None, None] * g_new.values - A1,
                                     g_new.values)[..., 0]
    bad = in_cone & (margin <= 0)
    violations = int(bad.sum())
    worst = np.where(in_cone, margin, np.inf)
    return IdentityReport(
        "lemma53", float(violations), 0.0, float(violations), float(violations) / bad.size, 0.0,
        violations == 0, g.grid.h, ABSOLUTE,
        {"min_margin": float(np.min(worst)), "worst_node": _node(-worst),
         "nodes_outside_cone": int((~in_cone).sum())},
    )


# -- Q-curvature corollary ---------------------------------------------------------------


def check_q_corollary(g: MetricField, bundle: CurvatureBundle | None = None, q=None,
                      tolerance: float = 1e-6, divergence_constant: float = 10.0) -> IdentityReport:
    """Integral consequences of ``Q >= R^2 / 48``.

    When the pointwise hypothesis holds, ``int |Ric|^2 <= (23/64) int R^2``
    and ``int sigma_2 >= (1/128) int R^2`` are asserted (within
    ``tolerance`` relative); ``int lap R = 0`` is checked at ``O(h^2)``.  The
    report's sides are ``int sigma_2`` and ``(1/128) int R^2`` and its gap is
    the shortfall of the former below the latter (zero when the bound holds).
    """
    b = _bundle(g, bundle)
    R = b.scalar.values
    qv = (q.values if hasattr(q, "values") else q) if q is not None else q_curvature(b, g).values
    excess = qv - R * R / 48.0
    hypothesis = bool(np.min(excess) >= -tolerance * max(1.0, float(np.max(np.abs(qv)))))
    R2 = integrate(R * R, g)
    ric_sq = integrate(contract(b.ricci.values, b.ricci.values, g.inverse), g)
    s2 = integrate(sigma1_sigma2(mixed(schouten_t(b, g, 1.0), g))[1], g)
    scale = max(abs(R2), abs(ric_sq), abs(s2), 1e-300)
    ric_ok = ric_sq <= (23.0 / 64.0) * R2 + tolerance * scale
    s2_ok = s2 >= R2 / 128.0 - tolerance * scale

    lap = laplacian(R, g, b.gamma.values)
    div_int = integrate(lap, g)
    div_scale = max(integrate(np.abs(lap), g), 1e-300)
    h = g.grid.h
    floor = 1e-10 * max(integrate(np.abs(R), g), 1.0)
    div_ok = abs(div_int) <= divergence_constant * h * h * div_scale or abs(div_int) <= floor
    shortfall = max(0.0, R2 / 128.0 - s2)
    passed = (not hypothesis) or (ric_ok and s2_ok)
    passed = passed and div_ok
    return IdentityReport(
        "q_corollary", s2, R2 / 128.0, shortfall, shortfall / scale, tolerance,
        bool(passed), h, RELATIVE,
        {"hypothesis_met": hypothesis, "min_Q_minus_R2_over_48": float(np.min(excess)),
         "worst_node": _node(-excess), "int_ric_sq": ric_sq, "int_R_sq": R2,
         "ric_bound": (23.0 / 64.0) * R2, "ric_ok": bool(ric_ok), "sigma2_ok": bool(s2_ok),
         "int_lap_R": div_int, "divergence_ok": bool(div_ok)},
    )


# -- transformation laws -----------------------------------------------------------------------


def derivative_scale(u: ConformalFactor) -> float:
    """``sup |lap lap u| + sup (lap u)^2 + sup |du|^4``, the size of the leading truncation terms."""
    bilap = laplacian(u.laplacian, u.g, u.gamma.values if hasattr(u.gamma, "values") else u.gamma)
    return float(np.max(np.abs(bilap)) + np.max(u.laplacian**2) + np.max(u.grad_sq**2))


def check_transformation_laws(g: MetricField, u, t: float, bundle: CurvatureBundle | None = None,
                              tolerance: float | None = None, constant: float = 2.0,
                              law: Callable = transform_schouten_t) -> IdentityReport:
    """Sup-norm gap between the conformal law for ``A^t`` and a full recomputation on ``g~``.

    Both routes start from the engine's curvature of ``g`` (``bundle`` should
    be that engine bundle; catalog bundles are replaced), so the gap isolates
    the transformation law.  The default absolute tolerance is
    ``constant * h^2 * derivative_scale(u)``.  ``law`` is injectable so that a
    deliberately wrong law can be shown to fail.  The scalar-curvature law is
    compared as well; the reported gap is the larger of the two.
    """
    b = _engine_bundle(g, bundle)
    u = _factor(g, u, b)
    g_new = conformal_metric(g, u)
    b_new = curvature_of(g_new)
    A_law = law(schouten_t(b, g, t), u, g, t).values
    A_eng = schouten_t(b_new, g_new, t).values
    diff_A = np.max(np.abs(A_law - A_eng), axis=(-2, -1))
    R_law = transform_scalar(b.scalar, u).values
    diff_R = np.abs(R_law - b_new.scalar.values)
    gap = np.maximum(diff_A, diff_R)
    k = np.unravel_index(np.argmax(gap), gap.shape)
    scale = max(float(np.max(np.abs(A_eng))), float(np.max(np.abs(b_new.scalar.values))))
    h = g.grid.h
    tol = constant * h * h * derivative_scale(u) if tolerance is None else tolerance
    node = tuple(int(i) for i in k)
    abs_gap = float(gap[k])
    return IdentityReport(
        "transformation_laws", float(np.max(np.abs(A_law[k]))), float(np.max(np.abs(A_eng[k]))),
        abs_gap, abs_gap / scale if scale > 0 else abs_gap, tol, bool(abs_gap <= tol), h, ABSOLUTE,
        {"t": t, "worst_node": node, "schouten_gap": float(np.max(diff_A)),
         "scalar_gap": float(np.max(diff_R)), "law_at_node": A_law[k], "engine_at_node": A_eng[k]},
    )


# -- randomized inputs ---------------------------------------------------------------------------


def random_smooth_u(grid, rng: np.random.Generator, amplitude: float = 0.3, modes: int = 3) -> ScalarField:
    """Smooth random conformal factor built from a few low modes valid on the chart.

    On the torus these are plane waves with wave numbers in ``{-1, 0, 1}``.
    On the sphere band they are the zonal modes ``cos(2kr)``, which extend
    smoothly across both poles; angular modes are left out because the
    ``1/sin^2 r`` and ``1/cos^2 r`` weights amplify angular differencing
    errors near the poles unless the angular axes are finely resolved.
    """
    c = grid.coordinates()
    v = np.zeros(grid.shape)
    if grid.kind is ChartKind.TORUS3:
        x, y, z = c["x"], c["y"], c["z"]
        scales = [2.0 * np.pi / L for L in grid.lengths]
        for _ in range(modes):
            k = rng.integers(-1, 2, size=3)
            if not np.any(k):
                k[rng.integers(0, 3)] = 1
            for axis in range(3):
                if not grid.active(axis):
                    k[axis] = 0
            phase = rng.uniform(0.0, 2.0 * np.pi)
            arg = k[0] * scales[0] * x + k[1] * scales[1] * y + k[2] * scales[2] * z
            v = v + amplitude * rng.uniform(0.5, 1.0) * np.cos(arg + phase)
    else:
        r = c["r"]
        for k in range(1, modes + 1):
            v = v + amplitude * rng.uniform(-1.0, 1.0) / k * np.cos(2.0 * k * r)
    return ScalarField(grid, np.broadcast_to(v, grid.shape))


def random_metric_samples(n: int, rng: np.random.Generator):
    """Random symmetric tensors and metrics as stacked ``(n, 3, 3)`` arrays."""
    A = _sym(rng.normal(size=(n, 3, 3)))
    L = np.tril(rng.normal(size=(n, 3, 3)), -1) + np.eye(3) * rng.uniform(0.5, 2.0, size=(n, 1, 3))
    return A, L @ np.swapaxes(L, -1, -2)


# -- suites ---------------------------------------------------------------------------------


@dataclass
class SuiteContext:
    """Inputs shared by the suites: a background, its curvature and seeded samples."""

    g: MetricField
    bundle: CurvatureBundle
    seed: int = 0
    u_fields: list = field(default_factory=list)
    t_values: tuple = (0.0, 2.0 / 3.0, 1.0)
    samples: int = 10_000

    @classmethod
    def build(cls, g, bundle=None, seed=0, u_fields=None, count=2, amplitude=0.3, **kw):
        bundle = _bundle(g, bundle)
        if not u_fields:
            rng = np.random.default_rng(seed)
            u_fields = [random_smooth_u(g.grid, rng, amplitude) for _ in range(count)]
        return cls(g, bundle, seed, list(u_fields), **kw)

    def rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])


def _suite_lemma51(ctx):
    return [check_lemma51(ctx.g, u, ctx.bundle) for u in ctx.u_fields]


def _suite_bochner(ctx):
    return [check_bochner(ctx.g, u, ctx.bundle) for u in ctx.u_fields]


def _suite_p2(ctx):
    t = np.concatenate([ctx.rng(1).uniform(-10.0, 10.0, ctx.samples), [0.0, 1.0, 2.0 / 3.0, P2_VERTEX]])
    return [check_p2(t)]


def _suite_sigma2_shift(ctx):
    rng = ctx.rng(2)
    A, gv = random_metric_samples(ctx.samples, rng)
    reports = [check_sigma2_shift(A, gv, rng.uniform(-2.0, 1.0, ctx.samples))]
    reports.append(check_sigma2_shift(schouten_t(ctx.bundle, ctx.g, 1.0), ctx.g, 2.0 / 3.0))
    reports[-1].name = "sigma2_shift_field"
    return reports


def _suite_sigma2_dual(ctx):
    A, gv = random_metric_samples(ctx.samples, ctx.rng(3))
    field_report = sigma2_dual(ctx.bundle.ricci, ctx.bundle.scalar, ctx.g)
    field_report.name = "sigma2_dual_field"
    return [sigma2_dual(A, None, gv), field_report]


def _suite_cone(ctx):
    rng = ctx.rng(4)
    return [check_cone_inequalities(sample_cone(ctx.samples, rng), rng)]


def _suite_q(ctx):
    return [check_q_corollary(ctx.g, ctx.bundle)]


def _suite_transformation(ctx):
    return [check_transformation_laws(ctx.g, u, t, ctx.bundle) for u in ctx.u_fields for t in ctx.t_values]


SUITES: dict[str, Callable[[SuiteContext], list]] = {
    "lemma51": _suite_lemma51,
    "bochner": _suite_bochner,
    "p2": _suite_p2,
    "sigma2_shift": _suite_sigma2_shift,
    "sigma2_dual": _suite_sigma2_dual,
    "cone": _suite_cone,
    "q_corollary": _suite_q,
    "transformation": _suite_transformation,
}


def run_suites(names, ctx: SuiteContext) -> list:
    """Run the named suites (``"all"`` expands to every suite) in registry order."""
    names = [names] if isinstance(names, str) else list(names)
    if "all" in names:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)} or 'all'")
    reports = []
    for name in names:
        reports.extend(SUITES[name](ctx))
    return reports


def refinement_ratio(coarse: IdentityReport, fine: IdentityReport) -> float:
    """``gap(h) / gap(h/2)``; about 4 for a second-order discretization."""
    if fine.abs_gap == 0:
        return float("inf") if coarse.abs_gap > 0 else float("nan")
    return coarse.abs_gap / fine.abs_gap
