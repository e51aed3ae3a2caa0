import numpy as np
import pytest

from optregime.penalty import (
    PenaltyFamily,
    PenaltySpec,
    condition1_audit,
    penalty_derivative,
    penalty_value,
)


def spec_grid():
    rng = np.random.default_rng(20240811)
    specs = []
    for _ in range(10):
        lam = float(rng.uniform(0.05, 2.5))
        specs.append(PenaltySpec("lasso", lam))
        specs.append(PenaltySpec("scad", lam, float(rng.uniform(2.2, 6.0))))
        specs.append(PenaltySpec("mcp", lam, float(rng.uniform(1.2, 5.0))))
    return specs


def kink_points(spec):
    lam = spec.lam
    if spec.family is PenaltyFamily.SCAD:
        return np.array([lam, spec.shape * lam])
    if spec.family is PenaltyFamily.MCP:
        return np.array([spec.shape * lam])
    return np.array([])


def integrate_derivative(spec, t, num=200001):
    # trapezoid integral of rho'; rho' is piecewise linear so this is
    # exact away from kinks up to O(h^2) error localized at the kinks
    grid = np.linspace(0.0, t, num)
    d = penalty_derivative(spec, grid)
    return float(np.trapezoid(d, grid))


def test_lasso_value_is_linear():
    spec = PenaltySpec("lasso", 0.5)
    assert penalty_value(spec, 2.0) == pytest.approx(1.0, abs=0.0)
    t = np.linspace(0.0, 4.0, 17)
    np.testing.assert_allclose(penalty_value(spec, t), 0.5 * t)
    np.testing.assert_allclose(penalty_derivative(spec, t), 0.5)


def test_scad_saturates_at_known_value():
    spec = PenaltySpec("scad", 1.0, 3.7)
    # beyond a*lambda the penalty is the constant lambda^2 (a + 1) / 2
    assert penalty_value(spec, 5.0) == pytest.approx(2.35, abs=1e-12)
    assert penalty_value(spec, 50.0) == pytest.approx(2.35, abs=1e-12)
    # the saturation value agrees with integrating rho' from 0
    assert integrate_derivative(spec, 5.0) == pytest.approx(2.35, abs=1e-7)


def test_mcp_derivative_matches_hand_value():
    spec = PenaltySpec("mcp", 1.0, 3.0)
    assert penalty_derivative(spec, 1.5) == pytest.approx(0.5, abs=1e-12)
    assert penalty_derivative(spec, 3.0) == pytest.approx(0.0, abs=0.0)
    assert penalty_value(spec, 10.0) == pytest.approx(1.5, abs=1e-12)


def test_value_matches_integral_of_derivative():
    for spec in spec_grid():
        for t in (0.5 * spec.lam, 2.0 * spec.lam, 6.0 * spec.lam):
            got = penalty_value(spec, t)
            want = integrate_derivative(spec, t)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-8), spec


def test_derivative_matches_finite_differences_away_from_kinks():
    h = 1e-6
    rng = np.random.default_rng(7)
    for spec in spec_grid():
        kinks = kink_points(spec)
        pts = rng.uniform(h, 8.0 * spec.lam, size=40)
        if kinks.size:
            pts = pts[np.min(np.abs(pts[:, None] - kinks[None, :]), axis=1) > 1e-3]
        fd = (penalty_value(spec, pts + h) - penalty_value(spec, pts - h)) / (2.0 * h)
        np.testing.assert_allclose(penalty_derivative(spec, pts), fd, atol=1e-6)


def test_derivative_is_continuous_at_kinks():
    for spec in spec_grid():
        for k in kink_points(spec):
            lo = penalty_derivative(spec, max(k - 1e-9, 0.0))
            hi = penalty_derivative(spec, k + 1e-9)
            assert abs(lo - hi) < 1e-7


def test_shape_properties_on_dense_grids():
    t = np.linspace(0.0, 12.0, 4001)
    for spec in spec_grid():
        vals = penalty_value(spec, t * spec.lam)
        ders = penalty_derivative(spec, t * spec.lam)
        assert vals[0] == 0.0
        assert ders[0] == pytest.approx(spec.lam, abs=0.0)
        assert np.all(np.diff(vals) >= -1e-12)
        assert np.all(np.diff(ders) <= 1e-12)
        assert np.all(ders >= 0.0)


def test_derivative_monotone_in_lambda():
    t = np.linspace(0.0, 6.0, 301)
    for fam, shape in (("lasso", None), ("scad", 3.7), ("mcp", 3.0)):
        lams = np.linspace(0.05, 3.0, 12)
        stack = np.vstack(
            [penalty_derivative(PenaltySpec(fam, l, shape), t) for l in lams]
        )
        assert np.all(np.diff(stack, axis=0) >= -1e-12), fam


def test_condition1_audit_passes_for_all_families():
    grid = np.linspace(1e-4, 10.0, 500)
    for spec in spec_grid():
        report = condition1_audit(spec, grid)
        assert report["ok"], report
        assert set(report["checks"]) == {
            "value_nondecreasing_in_t",
            "derivative_nonincreasing_in_t",
            "derivative_nondecreasing_in_lambda",
            "zero_at_origin",
            "derivative_at_origin_equals_lambda",
        }


def test_validation_errors():
    with pytest.raises(ValueError, match="negative"):
        penalty_value(PenaltySpec("lasso", 1.0), -0.5)
    with pytest.raises(ValueError, match="negative"):
        penalty_derivative(PenaltySpec("mcp", 1.0), np.array([0.2, -0.1]))
    with pytest.raises(ValueError, match="shape a > 2"):
        PenaltySpec("scad", 1.0, 2.0)
    with pytest.raises(ValueError, match="gamma > 1"):
        PenaltySpec("mcp", 1.0, 1.0)
    with pytest.raises(ValueError, match=">= 0"):
        PenaltySpec("lasso", -0.1)
    with pytest.raises(ValueError, match="valid names"):
        PenaltySpec("ridge", 1.0)
    with pytest.raises(ValueError, match="unset"):
        penalty_value(PenaltySpec("scad"), 1.0)
    with pytest.raises(ValueError, match="increasing"):
        condition1_audit(PenaltySpec("lasso", 1.0), np.array([1.0, 0.5]))


def test_lambda_zero_penalty_vanishes():
    for fam, shape in (("lasso", None), ("scad", 3.7), ("mcp", 3.0)):
        spec = PenaltySpec(fam, 0.0, shape)
        t = np.linspace(0.0, 3.0, 50)
        np.testing.assert_allclose(penalty_value(spec, t), 0.0)
        np.testing.assert_allclose(penalty_derivative(spec, t), 0.0)
