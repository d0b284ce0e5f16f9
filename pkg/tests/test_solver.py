import numpy as np
import pytest
from sklearn.base import clone

from sigma2geom.conformal import ConformalFactor
from sigma2geom.curvature import catalog
from sigma2geom.grid import ScalarField, flat_metric, make_grid
from sigma2geom.solver import (
    ConeBreachError,
    ContinuationFailure,
    HypothesisError,
    Sigma2ContinuationSolver,
    continuation,
    linearize,
    make_state,
    newton_step,
    pick_delta,
    residual,
    setup_problem,
    solve_at,
)


def closed_form_u(t, delta):
    return 0.5 * np.log((2 - 1.5 * t) / (2 - 1.5 * delta))


@pytest.fixture(scope="module")
def round_setup():
    g, b = catalog("round_s3", {}, make_grid("S3Band", [64, 1, 1]))
    return setup_problem(g, b)


def test_pick_delta_round_sphere(round_s3_64):
    g, b = round_s3_64
    # delta* = 4 * 2 / 6 = 4/3, capped by t0 - path_floor = -1/3
    assert pick_delta(g, b) == pytest.approx(-1.0 / 3.0, abs=1e-14)
    # a short path floor leaves delta = t0 - path_floor = 0.4, below delta* - margin
    assert pick_delta(g, b, t0=0.5, path_floor=0.1) == pytest.approx(0.4)
    assert pick_delta(g, b, margin=1.5, t0=0.5, path_floor=0.1) == pytest.approx(4.0 / 3.0 - 1.5)


def test_flat_torus_rejected(torus16):
    with pytest.raises(HypothesisError, match="R_g > 0 required"):
        setup_problem(torus16)


def test_setup_validation(round_s3_64):
    g, b = round_s3_64
    with pytest.raises(ValueError):
        setup_problem(g, b, t0=0.7)
    with pytest.raises(ValueError):
        setup_problem(g, b, delta=0.7, t0=0.5)


def test_path_start_is_exact(round_setup):
    F = residual(round_setup, np.zeros(round_setup.g.grid.shape), round_setup.delta)
    assert F.sup() <= 1e-14


@pytest.mark.parametrize("t", [-1.0 / 3.0, 0.0, 0.3, 2.0 / 3.0])
def test_closed_form_path_residual(round_setup, t):
    u = np.full(round_setup.g.grid.shape, closed_form_u(t, round_setup.delta))
    assert residual(round_setup, u, t).sup() <= 1e-12


def test_residual_sign_tracks_excess(round_setup):
    t = 0.2
    u0 = closed_form_u(t, round_setup.delta)
    # larger u: the source f^2 e^{4u} grows while sigma_2 is unchanged for constants
    assert np.all(residual(round_setup, np.full((64, 1, 1), u0 + 0.1), t).values < 0)
    assert np.all(residual(round_setup, np.full((64, 1, 1), u0 - 0.1), t).values > 0)


def test_linearization_zero_and_constant(round_setup):
    s = round_setup
    zero = np.zeros(s.g.grid.shape)
    assert np.all(linearize(s, zero, s.delta, zero).values == 0)
    L1 = linearize(s, zero, s.delta, np.ones(s.g.grid.shape)).values
    assert np.allclose(L1, -4.0 * s.f_sq, rtol=1e-13)


def _fd_ratios(setup, u, v, t):
    F0 = residual(setup, u, t).values
    L = linearize(setup, u, t, v).values
    out = []
    for eps in (1e-3, 1e-4):
        F1 = residual(setup, u + eps * v, t).values
        out.append(np.max(np.abs(F1 - F0 - eps * L)) / eps**2)
    return out


def test_linearization_matches_finite_differences(rng):
    g, b = catalog("berger_s3", {"epsilon": 0.9}, make_grid("S3Band", [24, 8, 8]))
    s = setup_problem(g, b)
    c = g.grid.coordinates()
    for _ in range(3):
        a = rng.normal(size=3) * 0.1
        u = a[0] * np.cos(2 * c["r"]) + a[1] * np.sin(c["r"]) * np.cos(c["theta"]) + a[2] * np.cos(c["r"]) * np.sin(c["phi"])
        v = np.cos(4 * c["r"]) + np.sin(c["r"]) * np.sin(c["theta"])
        r1, r2 = _fd_ratios(s, u, v, rng.uniform(s.delta, 2.0 / 3.0))
        assert 0.5 < r1 / r2 < 2.0


def test_exact_input_gives_zero_step(round_setup):
    state = make_state(round_setup, np.zeros((64, 1, 1)), round_setup.delta)
    new = newton_step(round_setup, state, tol_abs=1e-12)
    assert np.array_equal(new.u.values, state.u.values)


def test_quadratic_convergence(round_setup):
    t = 0.0
    state = make_state(round_setup, np.full((64, 1, 1), 0.1), t)
    history = [state.residual_sup]
    for _ in range(6):
        if state.residual_sup < 1e-12:
            break
        state = newton_step(round_setup, state, t)
        history.append(state.residual_sup)
    assert history[-1] < 1e-10
    ratios = [history[k + 1] / history[k] ** 2 for k in range(len(history) - 1) if history[k + 1] > 1e-13]
    assert max(ratios) < 10.0
    assert state.u.values[0, 0, 0] == pytest.approx(closed_form_u(t, round_setup.delta), abs=1e-10)


def test_cone_violating_start_fails_cleanly(round_setup):
    # u = -3 cos(2r) makes the Hessian term dominate and leaves the cone
    c = round_setup.g.grid.coordinates()
    u = ConformalFactor(-3.0 * np.cos(2 * c["r"]), round_setup.g, round_setup.bundle.gamma)
    state = make_state(round_setup, u, 0.5)
    assert state.cone_margin_min <= 0
    with pytest.raises(ConeBreachError) as info:
        newton_step(round_setup, state)
    assert info.value.node is not None
    with pytest.raises(ConeBreachError):
        solve_at(round_setup, state, 0.5, 1e-9)


def test_round_sphere_continuation(round_setup):
    rep = continuation(round_setup)
    assert rep.success and rep.last_good_t == pytest.approx(2.0 / 3.0)
    assert np.max(np.abs(rep.final_u.values - 0.5 * np.log(0.4))) < 1e-8
    assert rep.pinching_ok and rep.ricci_positive and rep.sigma2_positive and rep.scalar_positive
    assert all(s.cone_margin_min > 0 for s in rep.path)
    tol = 1e-9 * np.max(round_setup.f_sq)
    assert all(s.residual_sup <= tol for s in rep.path)
    assert len(rep.path) == 65
    d = rep.to_dict()
    assert d["final_u"]["oscillation"] == 0.0


def test_berger_continuation():
    g, b = catalog("berger_s3", {"epsilon": 0.8}, make_grid("S3Band", [32, 1, 1]))
    rep = continuation(setup_problem(g, b), steps=16)
    assert rep.success and rep.ricci_positive and rep.pinching_ok and rep.sigma2_positive


def test_conformally_round_nonconstant_solution():
    reps = []
    for n in (32, 64):
        g, b = catalog("conformally_round_s3", {"w": "0.05*cos(2*r)"}, make_grid("S3Band", [n, 1, 1]))
        reps.append(continuation(setup_problem(g, b), steps=16))
    assert all(r.success and r.pinching_ok for r in reps)
    assert reps[1].to_dict()["final_u"]["oscillation"] > 1e-4
    ratio = reps[0].margins["dual_route_residual"] / reps[1].margins["dual_route_residual"]
    assert 3.2 < ratio < 4.8


def test_bisection_exhaustion_returns_partial_report(round_setup):
    rep = continuation(round_setup, steps=4, tol_abs=0.0, max_newton=1, min_step_fraction=1.0 / 16)
    assert not rep.success
    assert rep.last_good_t < round_setup.t0
    assert "exhausted" in rep.message


def test_estimator_api():
    g, b = catalog("round_s3", {}, make_grid("S3Band", [32, 1, 1]))
    est = Sigma2ContinuationSolver(steps=8)
    assert est.get_params()["steps"] == 8
    assert clone(est).get_params() == est.get_params()
    est.fit(g, bundle=b)
    assert est.delta_ == pytest.approx(-1.0 / 3.0)
    assert np.allclose(est.u_.values, 0.5 * np.log(0.4), atol=1e-8)
    g_new = est.transform(g)
    assert np.allclose(g_new.values, 2.5 * g.values, rtol=1e-8)


def test_estimator_unfitted_and_failures(torus16):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        Sigma2ContinuationSolver().transform(torus16)
    with pytest.raises(HypothesisError):
        Sigma2ContinuationSolver().fit(torus16)
    g, b = catalog("round_s3", {}, make_grid("S3Band", [16, 1, 1]))
    with pytest.raises(ContinuationFailure) as info:
        Sigma2ContinuationSolver(steps=2, tol_abs=-1.0).fit(g, bundle=b)
    assert info.value.report.success is False
    partial = Sigma2ContinuationSolver(steps=2, tol_abs=-1.0, raise_on_failure=False).fit(g, bundle=b)
    assert partial.report_.last_good_t == pytest.approx(partial.delta_)
