"""Continuation solver for ``sigma_2(g^{-1} A^t_{u_t}) = f^2 e^{4 u_t}``.

The path starts at ``t = delta`` where ``u = 0`` solves the equation by
construction of ``f = sigma_2(g^{-1} A^delta_g)^{1/2}``, and marches ``t`` to
``t0 <= 2/3``.  Each step runs damped Newton iterations; the linear systems
are solved matrix-free with preconditioned GMRES.  Every accepted state keeps
``g^{-1} A^t_u`` strictly inside the cone ``{sigma_1 > 0, sigma_2 > 0}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .conformal import (
    T_MAX,
    ConformalFactor,
    conformal_metric,
    transform_scalar,
    transform_schouten_t,
)
from .curvature import (
    CurvatureBundle,
    curvature_of,
    generalized_eigenvalues,
    mixed,
    schouten_t,
    sigma1_sigma2,
)
from .grid import MetricField, ScalarField, gradient, second_partials
from .validation import check_metric, check_scalar_field

log = logging.getLogger(__name__)

HYPOTHESIS_MESSAGE = "R_g > 0 required: the background metric must have positive scalar curvature"


class HypothesisError(ValueError):
    """The background metric violates a standing hypothesis (e.g. ``R_g > 0``)."""


class ConeBreachError(ArithmeticError):
    """Line search could not find a step that reduces the residual inside the cone."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ContinuationFailure(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class ProblemSetup:
    g: MetricField
    bundle: CurvatureBundle
    delta: float
    f: ScalarField
    t0: float = T_MAX

    @property
    def f_sq(self) -> np.ndarray:
        return self.f.values**2


@dataclass
class ContinuationState:
    t: float
    u: ConformalFactor
    residual_sup: float
    cone_margin_min: float
    newton_iters: int = 0
    diagnostics: dict = field(default_factory=dict)
    residual_history: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "t": self.t,
            "residual_sup": self.residual_sup,
            "cone_margin_min": self.cone_margin_min,
            "newton_iters": self.newton_iters,
            **self.diagnostics,
        }


@dataclass
class SolveReport:
    path: list
    final_u: ConformalFactor | None
    success: bool
    delta: float
    t0: float
    last_good_t: float
    pinching_ok: bool = False
    ricci_positive: bool = False
    sigma2_positive: bool = False
    scalar_positive: bool = False
    margins: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self) -> dict:
        u = self.final_u.values if self.final_u is not None else np.zeros(1)
        return {
            "success": self.success,
            "message": self.message,
            "delta": self.delta,
            "t0": self.t0,
            "last_good_t": self.last_good_t,
            "steps_accepted": len(self.path),
            "final_u": {
                "sup": float(np.max(u)),
                "inf": float(np.min(u)),
                "mean": float(np.mean(u)),
                "oscillation": float(np.max(u) - np.min(u)),
            },
            "pinching_ok": self.pinching_ok,
            "ricci_positive": self.ricci_positive,
            "sigma2_positive": self.sigma2_positive,
            "scalar_positive": self.scalar_positive,
            "margins": dict(self.margins),
        }


# -- setup ----------------------------------------------------------------------


def _require_positive_scalar(bundle: CurvatureBundle):
    R = bundle.scalar.values
    if not np.all(R > 0):
        idx = np.unravel_index(np.argmin(R), R.shape)
        raise HypothesisError(
            f"{HYPOTHESIS_MESSAGE} (min R = {R[idx]:.6g} at node {tuple(int(i) for i in idx)})"
        )


def pick_delta(g: MetricField, bundle: CurvatureBundle, margin: float = 0.1, t0: float = T_MAX,
               path_floor: float = 1.0) -> float:
    """Start parameter with ``A^delta_g`` positive definite.

    ``delta* = min 4 lambda_min(g^{-1} Ric) / R`` is the threshold; the result
    is ``min(delta* - margin, t0 - path_floor)``.
    """
    _require_positive_scalar(bundle)
    lam = generalized_eigenvalues(bundle.ricci.values, g.values)
    R = bundle.scalar.values
    delta_star = float(np.min(4.0 * lam[..., 0] / R))
    delta = min(delta_star - margin, t0 - path_floor)
    A = schouten_t(bundle, g, delta)
    if not np.all(generalized_eigenvalues(A.values, g.values) > 0):
        raise HypothesisError(f"A^delta is not positive definite for delta = {delta}")
    return delta


def setup_problem(g: MetricField, bundle: CurvatureBundle | None = None, t0: float = T_MAX,
                  delta: float | None = None, delta_margin: float = 0.1,
                  path_floor: float = 1.0) -> ProblemSetup:
    g = check_metric(g)
    if t0 > T_MAX + 1e-15:
        raise ValueError(f"t0 = {t0} exceeds 2/3")
    bundle = bundle if bundle is not None else curvature_of(g)
    _require_positive_scalar(bundle)
    if delta is None:
        delta = pick_delta(g, bundle, delta_margin, t0, path_floor)
    if not delta < t0:
        raise ValueError(f"delta = {delta} must be below t0 = {t0}")
    A = schouten_t(bundle, g, delta)
    if not np.all(generalized_eigenvalues(A.values, g.values) > 0):
        raise HypothesisError(f"A^delta is not positive definite for delta = {delta}")
    _, s2 = sigma1_sigma2(mixed(A, g))
    return ProblemSetup(g, bundle, float(delta), ScalarField(g.grid, np.sqrt(s2)), float(t0))


# -- residual and linearization ---------------------------------------------------


def _factor(setup: ProblemSetup, u) -> ConformalFactor:
    if isinstance(u, ConformalFactor):
        return u
    return ConformalFactor(u, setup.g, setup.bundle.gamma)


def _terms(setup: ProblemSetup, u: ConformalFactor, t: float):
    A = transform_schouten_t(schouten_t(setup.bundle, setup.g, t), u, setup.g, t)
    M = mixed(A, setup.g)
    s1, s2 = sigma1_sigma2(M)
    source = setup.f_sq * np.exp(4.0 * u.values)
    return A, M, s1, s2, source


def residual(setup: ProblemSetup, u, t: float) -> ScalarField:
    """``F_t(u) = sigma_2(g^{-1} A^t_u) - f^2 e^{4u}``, with ``A^t_u`` from the conformal law."""
    u = _factor(setup, u)
    _, _, _, s2, source = _terms(setup, u, t)
    return ScalarField(setup.g.grid, s2 - source)


class _Jacobian:
    """Frozen coefficients of the linearized operator at ``(u, t)``.

    ``L v = C^{ab} d_a d_b v + beta^k d_k v + c0 v`` where ``C`` is the raised
    principal coefficient ``T_1 + (1 - t) sigma_1(T_1) I``.
    """

    def __init__(self, setup: ProblemSetup, u: ConformalFactor, t: float):
        g = setup.g
        ginv = g.inverse
        _, M, s1, _, source = _terms(setup, u, t)
        # T_1 g^{-1} = sigma_1 g^{-1} - g^{-1} A g^{-1}
        T = s1[..., None, None] * ginv - np.einsum("...ik,...kj->...ij", M, ginv)
        T = 0.5 * (T + np.swapaxes(T, -1, -2))
        tau = 2.0 * s1
        C = T + (1.0 - t) * tau[..., None, None] * ginv
        du = u.du
        b = 2.0 * np.einsum("...ij,...i->...j", T, du) - (2.0 - t) * tau[..., None] * np.einsum(
            "...jb,...b->...j", ginv, du
        )
        gamma = setup.bundle.gamma.values
        self.grid = g.grid
        self.C = C
        self.beta = b - np.einsum("...ab,...kab->...k", C, gamma)
        self.c0 = -4.0 * source
        spacing = g.grid.spacing
        diag = self.c0.copy()
        for a in g.grid.active_axes:
            diag = diag - 2.0 * C[..., a, a] / spacing[a] ** 2
        self.diag = diag

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.reshape(v, self.grid.shape)
        out = np.einsum("...ab,...ab->...", self.C, second_partials(v, self.grid))
        out += np.einsum("...k,...k->...", self.beta, gradient(v, self.grid))
        return out + self.c0 * v

    def operator(self) -> LinearOperator:
        n = self.grid.size
        return LinearOperator((n, n), matvec=lambda x: self.apply(x).ravel(), dtype=float)

    def preconditioner(self) -> LinearOperator:
        n = self.grid.size
        inv = 1.0 / self.diag.ravel()
        return LinearOperator((n, n), matvec=lambda x: inv * np.ravel(x), dtype=float)


def linearize(setup: ProblemSetup, u, t: float, v) -> ScalarField:
    """Directional derivative ``L[v]`` of the residual at ``u``.

    ``L[v] = <T_1(g^{-1} A^t_u), B> - 4 f^2 e^{4u} v`` with
    ``B = hess v + (1-t) lap(v) g + du dv + dv du - (2-t) <du, dv> g``.
    """
    u = _factor(setup, u)
    vv = v.values if isinstance(v, ScalarField) else np.asarray(v, dtype=float)
    return ScalarField(setup.g.grid, _Jacobian(setup, u, t).apply(vv))


# -- Newton -----------------------------------------------------------------------------


def _diagnostics(u: ConformalFactor) -> dict:
    sup_u = float(np.max(u.values))
    inf_u = float(np.min(u.values))
    return {
        "sup_u": sup_u,
        "inf_u": inf_u,
        "sup_grad_u": u.grad_sup,
        "harnack_gap": sup_u - inf_u,
    }


def _evaluate(setup: ProblemSetup, u: ConformalFactor, t: float):
    _, _, s1, s2, source = _terms(setup, u, t)
    F = s2 - source
    margin = np.minimum(s1, s2)
    return F, margin


def make_state(setup: ProblemSetup, u, t: float, newton_iters: int = 0, history=None) -> ContinuationState:
    u = _factor(setup, u)
    F, margin = _evaluate(setup, u, t)
    return ContinuationState(
        t=float(t),
        u=u,
        residual_sup=float(np.max(np.abs(F))),
        cone_margin_min=float(np.min(margin)),
        newton_iters=newton_iters,
        diagnostics=_diagnostics(u),
        residual_history=list(history or [float(np.max(np.abs(F)))]),
    )


def newton_step(setup: ProblemSetup, state: ContinuationState, t: float | None = None,
                tol_abs: float = 0.0, lin_rtol: float = 1e-10,
                min_damping: float = 1e-6) -> ContinuationState:
    """One damped Newton iteration at parameter ``t`` (default ``state.t``)."""
    t = state.t if t is None else t
    u = state.u
    F, margin = _evaluate(setup, u, t)
    res = float(np.max(np.abs(F)))
    if not np.all(margin > 0):
        node = np.unravel_index(np.argmin(margin), margin.shape)
        raise ConeBreachError(f"state outside the cone at node {tuple(int(i) for i in node)}",
                              tuple(int(i) for i in node))
    if res == 0.0 or res <= tol_abs:
        return make_state(setup, u, t, state.newton_iters, state.residual_history)

    jac = _Jacobian(setup, u, t)
    v, info = gmres(jac.operator(), -F.ravel(), rtol=lin_rtol, atol=0.0,
                    restart=min(200, setup.g.grid.size), maxiter=50, M=jac.preconditioner())
    if info != 0:
        log.debug("GMRES did not reach rtol (info=%d)", info)
    v = v.reshape(setup.g.grid.shape)

    alpha = 1.0
    worst = None
    while alpha >= min_damping:
        trial = u.with_values(u.values + alpha * v)
        F_new, margin_new = _evaluate(setup, trial, t)
        res_new = float(np.max(np.abs(F_new)))
        in_cone = bool(np.all(margin_new > 0))
        if in_cone and (res_new < res or res_new <= tol_abs):
            history = state.residual_history + [res_new]
            return ContinuationState(
                t=float(t),
                u=trial,
                residual_sup=res_new,
                cone_margin_min=float(np.min(margin_new)),
                newton_iters=state.newton_iters + 1,
                diagnostics=_diagnostics(trial),
                residual_history=history,
            )
        if not in_cone:
            worst = np.unravel_index(np.argmin(margin_new), margin_new.shape)
        else:
            worst = np.unravel_index(np.argmax(np.abs(F_new)), F_new.shape)
        alpha *= 0.5
    node = tuple(int(i) for i in worst) if worst is not None else None
    raise ConeBreachError(f"cone breach / no descent: damping underflow at node {node}", node)


def solve_at(setup: ProblemSetup, state: ContinuationState, t: float, tol_abs: float,
             max_iter: int = 25) -> ContinuationState:
    """Newton iterations at fixed ``t`` starting from ``state.u``."""
    current = make_state(setup, state.u, t)
    if not current.cone_margin_min > 0:
        raise ConeBreachError("warm start lies outside the cone")
    for _ in range(max_iter):
        if current.residual_sup <= tol_abs:
            return current
        current = newton_step(setup, current, t, tol_abs=tol_abs)
    if current.residual_sup <= tol_abs:
        return current
    raise ConeBreachError(f"Newton did not converge in {max_iter} iterations "
                          f"(residual {current.residual_sup:.3e})")


# -- continuation ---------------------------------------------------------------------


def endpoint_checks(setup: ProblemSetup, u: ConformalFactor, t0: float) -> dict:
    """Pointwise curvature checks on ``g~ = e^{-2u} g`` at the end of the path."""
    g = setup.g
    bundle = setup.bundle
    g_new = conformal_metric(g, u)
    R_new = transform_scalar(bundle.scalar, u).values
    A1_new = transform_schouten_t(schouten_t(bundle, g, 1.0), u, g, 1.0).values
    ric_new = A1_new + 0.25 * R_new[..., None, None] * g_new.values
    Rg = R_new[..., None, None] * g_new.values
    lower = generalized_eigenvalues(6.0 * ric_new - (3.0 * t0 - 2.0) * Rg, g_new.values)
    upper = generalized_eigenvalues(3.0 * (2.0 - t0) * Rg - 6.0 * ric_new, g_new.values)
    ric_eig = generalized_eigenvalues(ric_new, g_new.values)
    At = transform_schouten_t(schouten_t(bundle, g, t0), u, g, t0)
    _, s2_bg = sigma1_sigma2(mixed(At, g))
    _, s2_tilde = sigma1_sigma2(mixed(At, g_new))
    margins = {
        "pinching_lower_min": float(np.min(lower)),
        "pinching_upper_min": float(np.min(upper)),
        "ricci_min_eigenvalue": float(np.min(ric_eig)),
        "sigma2_min": float(np.min(s2_bg)),
        "sigma2_tilde_consistency": float(np.max(np.abs(s2_tilde - np.exp(4.0 * u.values) * s2_bg))),
        "scalar_min": float(np.min(R_new)),
    }
    return margins


def dual_route_residual(setup: ProblemSetup, u: ConformalFactor, t: float) -> float:
    """Residual sup-norm with ``A^t`` recomputed by the curvature engine on ``g~``."""
    g_new = conformal_metric(setup.g, u)
    b_new = curvature_of(g_new)
    _, s2 = sigma1_sigma2(mixed(schouten_t(b_new, g_new, t), setup.g))
    return float(np.max(np.abs(s2 - setup.f_sq * np.exp(4.0 * u.values))))


def continuation(setup: ProblemSetup, steps: int = 64, tol_abs: float | None = None,
                 min_step_fraction: float = 1.0 / 4096, max_newton: int = 25) -> SolveReport:
    """March ``t`` from ``delta`` to ``t0`` with warm-started Newton solves.

    Failed steps are bisected down to ``(t0 - delta) * min_step_fraction``;
    when that is exhausted the report carries ``success = False`` and the
    last parameter reached.
    """
    t0 = setup.t0
    delta = setup.delta
    span = t0 - delta
    if tol_abs is None:
        tol_abs = 1e-9 * float(np.max(setup.f_sq))
    dt_default = span / steps
    dt_min = span * min_step_fraction

    state = make_state(setup, np.zeros(setup.g.grid.shape), delta)
    if not state.cone_margin_min > 0:
        raise HypothesisError("A^delta_g is outside the cone at the start of the path")
    path = [state]
    t = delta
    dt = dt_default
    message = ""
    while t < t0:
        t_next = min(t + dt, t0)
        if t0 - t_next < 1e-12 * span:
            t_next = t0
        try:
            new = solve_at(setup, state, t_next, tol_abs, max_newton)
        except (ConeBreachError, OverflowError, FloatingPointError) as exc:
            dt *= 0.5
            log.info("step to t=%.6f failed (%s); bisecting to dt=%.3e", t_next, exc, dt)
            if dt < dt_min:
                message = f"step bisection exhausted at t = {t:.10g}: {exc}"
                break
            continue
        path.append(new)
        state = new
        t = t_next
        dt = min(dt * 2.0, dt_default)

    success = t >= t0
    report = SolveReport(path=path, final_u=state.u, success=success, delta=delta, t0=t0,
                         last_good_t=float(t), message=message or "converged")
    if success:
        margins = endpoint_checks(setup, state.u, t0)
        margins["dual_route_residual"] = dual_route_residual(setup, state.u, t0)
        report.margins = margins
        report.pinching_ok = margins["pinching_lower_min"] > 0 and margins["pinching_upper_min"] > 0
        report.ricci_positive = margins["ricci_min_eigenvalue"] > 0
        report.sigma2_positive = margins["sigma2_min"] > 0
        report.scalar_positive = margins["scalar_min"] > 0
    return report


# -- estimator interface ---------------------------------------------------------------


class Sigma2ContinuationSolver(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper around :func:`continuation`.

    ``fit(g)`` solves the path on the background metric ``g`` and stores the
    endpoint factor in ``u_``; ``transform(g)`` returns ``e^{-2 u_} g``.

    Parameters
    ----------
    t0 : float
        Endpoint of the path, at most 2/3.
    delta : float or None
        Start parameter; chosen by :func:`pick_delta` when None.
    delta_margin, path_floor : float
        Passed to :func:`pick_delta`.
    steps : int
        Uniform number of continuation steps before any bisection.
    tol_abs : float or None
        Residual tolerance; defaults to ``1e-9 * sup f^2``.
    raise_on_failure : bool
        Raise :class:`ContinuationFailure` instead of returning a partial fit.
    """

    def __init__(self, t0=T_MAX, delta=None, delta_margin=0.1, path_floor=1.0, steps=64,
                 tol_abs=None, raise_on_failure=True):
        self.t0 = t0
        self.delta = delta
        self.delta_margin = delta_margin
        self.path_floor = path_floor
        self.steps = steps
        self.tol_abs = tol_abs
        self.raise_on_failure = raise_on_failure

    def fit(self, X, y=None, bundle=None):
        g = check_metric(X)
        setup = setup_problem(g, bundle, t0=self.t0, delta=self.delta,
                              delta_margin=self.delta_margin, path_floor=self.path_floor)
        report = continuation(setup, steps=self.steps, tol_abs=self.tol_abs)
        self.setup_ = setup
        self.report_ = report
        self.delta_ = setup.delta
        self.path_ = report.path
        self.u_ = report.final_u.u
        if not report.success and self.raise_on_failure:
            raise ContinuationFailure(report.message, report)
        return self

    def transform(self, X):
        check_is_fitted(self, "u_")
        g = check_metric(X)
        u = check_scalar_field(self.u_, g.grid)
        return conformal_metric(g, u)
