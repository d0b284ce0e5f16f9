import numpy as np
import pytest

from sigma2geom.conformal import (
    ConformalFactor,
    conformal_metric,
    estimate_I,
    i_functional,
    pinching_coefficient,
    pinching_margin,
    total_sigma2,
    transform_scalar,
    transform_schouten_t,
    yamabe_quotient,
)
from sigma2geom.curvature import catalog, curvature_of, schouten_t
from sigma2geom.expr import evaluate
from sigma2geom.grid import ScalarField, flat_metric, make_grid


def test_zero_factor_is_identity(round_s3_64):
    g, b = round_s3_64
    u = ConformalFactor.constant(g, 0.0, b.gamma)
    A = schouten_t(b, g, 0.4)
    assert np.array_equal(transform_schouten_t(A, u, g, 0.4).values, A.values)
    assert np.array_equal(conformal_metric(g, u).values, g.values)


def test_constant_factor_scaling(round_s3_64):
    g, b = round_s3_64
    u = ConformalFactor.constant(g, 0.3, b.gamma)
    assert np.allclose(transform_scalar(b.scalar, u).values, 6.0 * np.exp(0.6))
    assert np.allclose(transform_schouten_t(schouten_t(b, g, 1.0), u, g, 1.0).values,
                       schouten_t(b, g, 1.0).values)


def test_overflow_guard(torus16):
    with pytest.raises(OverflowError):
        conformal_metric(torus16, ScalarField.constant(torus16.grid, 60.0))


@pytest.mark.parametrize("t", [0.0, 2.0 / 3.0, 1.0])
def test_law_matches_engine_on_torus(t):
    errs = []
    for n in (16, 32):
        grid = make_grid("Torus3", [n, n, n])
        g = flat_metric(grid)
        b = curvature_of(g)
        u = ConformalFactor(evaluate("0.1*sin(x)*cos(y) + 0.05*cos(z)", grid), g, b.gamma)
        law = transform_schouten_t(schouten_t(b, g, t), u, g, t).values
        g2 = conformal_metric(g, u)
        errs.append(np.max(np.abs(law - schouten_t(curvature_of(g2), g2, t).values)))
    assert 3.2 < errs[0] / errs[1] < 4.8


def test_round_sphere_functionals(round_s3_64):
    g, b = round_s3_64
    assert total_sigma2(g, b) == pytest.approx(1.5 * np.pi**2, rel=1e-12)
    assert i_functional(g, "0", b) == pytest.approx(72 * np.pi**2, rel=1e-12)
    q = 12 * np.pi**2 / (2 * np.pi**2) ** (1 / 3)
    assert yamabe_quotient(g, b) == pytest.approx(q, rel=1e-12)
    assert q == pytest.approx(43.82, abs=5e-3)


def test_pinching_margin_round(round_s3_64):
    g, b = round_s3_64
    rep = pinching_margin(g, 2.0 / 3.0, bundle=b)
    assert rep.mu_t == pytest.approx(1.6 * np.pi**2, rel=1e-12)
    assert rep.hypothesis_met and rep.I_is_upper_bound
    assert pinching_coefficient(0.7) == 0.0
    with pytest.raises(ValueError):
        pinching_margin(g, 0.7, bundle=b)


def test_i_estimate_skips_steep_candidates(round_s3_64):
    g, b = round_s3_64
    best, samples, warnings = estimate_I(g, ["0.05*cos(2*r)", "3*cos(2*r)"], grad_cap=1.0, bundle=b)
    labels = [s.label for s in samples]
    assert labels == ["0", "0.05*cos(2*r)"]
    assert len(warnings) == 1 and "3*cos(2*r)" in warnings[0]
    assert best == min(s.value for s in samples)


def test_i_functional_constant_shift(round_s3_64):
    g, b = round_s3_64
    # R' = 6 e^{2c}, weight e^{-4c}: the integrand is invariant
    assert i_functional(g, "0.2", b) == pytest.approx(72 * np.pi**2, rel=1e-12)
