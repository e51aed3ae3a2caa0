import numpy as np
import pytest

from helpers import random_design
from optregime.penalty import PenaltySpec
from optregime.regime import (
    Dataset,
    PhiMode,
    PropensityMode,
    decide,
    fit_regime,
    residualize,
)
from optregime.solver import DesignMatrix, SolverOptions


def make_dataset(rng, n=60, p=5, intercept=True):
    dm = random_design(rng, n, p, corr=0.2, intercept=intercept)
    a = (rng.random(n) < 0.5).astype(float)
    y = rng.standard_normal(n)
    return Dataset(y, a, dm)


# ---------------------------------------------------------------------------
# decision rule


def test_decide_hand_examples():
    assert decide(np.array([1.0, -1.0]), np.array([2.0, 1.0])) == 1
    assert decide(np.array([1.0, -2.0]), np.array([2.0, 1.0])) == 0  # score 0: tie
    assert decide(np.zeros(3), np.array([4.0, -1.0, 2.0])) == 0


def test_decide_positive_rescaling_invariance():
    rng = np.random.default_rng(3)
    beta = rng.standard_normal(6)
    xs = rng.standard_normal((40, 6))
    base = decide(beta, xs)
    for c in (1e-6, 0.5, 3.0, 1e6):
        np.testing.assert_array_equal(decide(c * beta, xs), base)


def test_decide_matrix_matches_rowwise():
    rng = np.random.default_rng(4)
    beta = rng.standard_normal(4)
    xs = rng.standard_normal((10, 4))
    rows = np.array([decide(beta, x) for x in xs])
    np.testing.assert_array_equal(decide(beta, xs), rows)


def test_decide_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        decide(np.ones(3), np.ones(4))


# ---------------------------------------------------------------------------
# residualization


def test_residualize_hand_instance():
    # one row: Z = (A - pi) * x and r = Y - phi, checked by hand
    dm = DesignMatrix(np.array([[1.0, 2.0, -3.0]]), has_intercept=True)
    data = Dataset(np.array([5.0]), np.array([1.0]), dm)
    z, r = residualize(data, np.array([0.2]), np.array([1.5]))
    np.testing.assert_allclose(z.values, [[0.8, 1.6, -2.4]])
    np.testing.assert_allclose(r, [3.5])
    assert not z.has_intercept and not z.standardized


def test_residualize_perfect_propensity_zeroes_design():
    rng = np.random.default_rng(5)
    data = make_dataset(rng, n=20, p=3)
    z, _ = residualize(data, data.a, np.zeros(20))
    np.testing.assert_array_equal(z.values, np.zeros_like(z.values))


def test_residualize_randomized_trial_halves_rows():
    rng = np.random.default_rng(6)
    data = make_dataset(rng, n=15, p=4)
    z, _ = residualize(data, np.full(15, 0.5), np.zeros(15))
    signs = np.where(data.a == 1.0, 0.5, -0.5)
    np.testing.assert_allclose(z.values, signs[:, None] * data.design.values)


def test_residualize_length_validation():
    rng = np.random.default_rng(7)
    data = make_dataset(rng, n=12, p=3)
    with pytest.raises(ValueError, match="length"):
        residualize(data, np.full(11, 0.5), np.zeros(12))


# ---------------------------------------------------------------------------
# pipeline oracles


def test_known_propensity_lambda0_matches_transformed_ols():
    # A independent of X at pi=0.5, working mean forced to zero, no
    # penalty: the contrast stage is exactly OLS on (A - 0.5) x
    rng = np.random.default_rng(11)
    n = 80
    dm = random_design(rng, n, 2, intercept=False)
    a = (rng.random(n) < 0.5).astype(float)
    beta_true = np.array([1.0, -2.0])
    y = (a - 0.5) * (dm.values @ beta_true) + 0.3 * rng.standard_normal(n)
    data = Dataset(y, a, dm)
    est = fit_regime(
        data,
        PenaltySpec("lasso", 0.0),
        propensity_mode=PropensityMode.KNOWN,
        known_propensity=0.5,
        phi_mode=PhiMode.ZERO,
        opts=SolverOptions(tolerance=1e-12),
    )
    zmat = (a - 0.5)[:, None] * dm.values
    oracle, *_ = np.linalg.lstsq(zmat, y, rcond=None)
    np.testing.assert_allclose(est.beta_hat.coefficients, oracle, atol=1e-8)
    np.testing.assert_allclose(est.phi_hat, 0.0)
    np.testing.assert_array_equal(est.pi_hat, np.full(n, 0.5))


def test_zero_response_gives_zero_contrast():
    rng = np.random.default_rng(12)
    n = 30
    dm = random_design(rng, n, 4)
    data = Dataset(np.zeros(n), (rng.random(n) < 0.5).astype(float), dm)
    est = fit_regime(data, PenaltySpec("scad", 0.1),
                     propensity_mode=PropensityMode.SAMPLE_PROPORTION)
    np.testing.assert_array_equal(est.theta_hat.coefficients, np.zeros(dm.p))
    np.testing.assert_array_equal(est.beta_hat.coefficients, np.zeros(dm.p))
    assert est.beta_hat.objective == 0.0


def test_known_equals_sample_proportion_when_abar_matches():
    # with A exactly half treated, the sample proportion is 0.5 and the
    # two propensity modes feed identical pi into the later stages
    rng = np.random.default_rng(13)
    n = 40
    dm = random_design(rng, n, 5)
    a = np.zeros(n)
    a[rng.permutation(n)[: n // 2]] = 1.0
    y = dm.values @ np.array([0.5, 1.0, -1.0, 0.0, 0.0, 0.3]) + (
        a - 0.5
    ) * (dm.values[:, 1] - dm.values[:, 2]) + 0.2 * rng.standard_normal(n)
    data = Dataset(y, a, dm)
    spec = PenaltySpec("scad", 0.05)
    known = fit_regime(data, spec, propensity_mode=PropensityMode.KNOWN,
                       known_propensity=0.5)
    prop = fit_regime(data, spec, propensity_mode=PropensityMode.SAMPLE_PROPORTION)
    np.testing.assert_array_equal(known.pi_hat, prop.pi_hat)
    np.testing.assert_allclose(
        known.beta_hat.coefficients, prop.beta_hat.coefficients, atol=1e-12
    )


def test_translation_consistency_of_residualization():
    # shifting Y by a constant moves only the free working-mean
    # intercept; the fitted contrast is unchanged
    rng = np.random.default_rng(14)
    n = 60
    dm = random_design(rng, n, 4)
    a = (rng.random(n) < 0.5).astype(float)
    y = dm.values @ np.array([0.2, 0.8, -0.5, 0.0, 0.0]) + (a - 0.5) * (
        1.2 * dm.values[:, 1]
    ) + 0.3 * rng.standard_normal(n)
    specs = (PenaltySpec("scad", 0.1), PenaltySpec("scad", 0.08), PenaltySpec("scad", 0.06))
    base = fit_regime(Dataset(y, a, dm), specs,
                      propensity_mode=PropensityMode.KNOWN, known_propensity=0.5)
    shifted = fit_regime(Dataset(y + 7.5, a, dm), specs,
                         propensity_mode=PropensityMode.KNOWN, known_propensity=0.5)
    assert shifted.theta_hat.coefficients[0] == pytest.approx(
        base.theta_hat.coefficients[0] + 7.5, abs=1e-5
    )
    np.testing.assert_allclose(
        shifted.beta_hat.coefficients, base.beta_hat.coefficients, atol=1e-5
    )


def test_noiseless_linear_truth_recovers_support():
    # noiseless outcome with a linear baseline: cross-validated SCAD
    # recovers the exact contrast support at desk scale
    rng = np.random.default_rng(15)
    n, p = 300, 9
    dm = random_design(rng, n, p, intercept=True, scale_to_root_n=False)
    a = (rng.random(n) < 0.5).astype(float)
    beta_true = np.zeros(p + 1)
    beta_true[[1, 2]] = [1.5, -1.0]
    gamma = np.zeros(p + 1)
    gamma[0] = 1.0
    gamma[[3, 4]] = [0.8, -0.6]
    y = dm.values @ gamma + a * (dm.values @ beta_true)
    data = Dataset(y, a, dm)
    est = fit_regime(
        data,
        PenaltySpec("scad"),
        opts=SolverOptions(lambda_grid_size=30, lambda_min_ratio=0.01),
        propensity_mode=PropensityMode.KNOWN,
        known_propensity=0.5,
        seed=3,
    )
    np.testing.assert_array_equal(est.beta_hat.support, np.flatnonzero(beta_true))


# ---------------------------------------------------------------------------
# propensity modes and validation


def test_sample_proportion_pi_and_bookkeeping_alpha():
    rng = np.random.default_rng(16)
    n = 50
    data = make_dataset(rng, n=n, p=4)
    est = fit_regime(data, PenaltySpec("lasso", 0.2),
                     propensity_mode=PropensityMode.SAMPLE_PROPORTION)
    abar = float(np.mean(data.a))
    np.testing.assert_array_equal(est.pi_hat, np.full(n, abar))
    assert est.alpha_hat.coefficients[0] == pytest.approx(np.log(abar / (1 - abar)))
    assert est.alpha_hat.converged


def test_all_control_logistic_flag_propagates():
    rng = np.random.default_rng(17)
    n = 30
    dm = random_design(rng, n, 3)
    data = Dataset(rng.standard_normal(n), np.zeros(n), dm)
    est = fit_regime(data, PenaltySpec("lasso", 0.1))
    assert not est.alpha_hat.converged
    assert not est.converged


def test_known_mode_validation():
    rng = np.random.default_rng(18)
    data = make_dataset(rng, n=20, p=3)
    with pytest.raises(ValueError, match="requires known_propensity"):
        fit_regime(data, PenaltySpec("lasso", 0.1),
                   propensity_mode=PropensityMode.KNOWN)
    with pytest.raises(ValueError, match="strictly inside"):
        fit_regime(data, PenaltySpec("lasso", 0.1),
                   propensity_mode=PropensityMode.KNOWN, known_propensity=1.2)
    with pytest.raises(ValueError, match="length"):
        fit_regime(data, PenaltySpec("lasso", 0.1),
                   propensity_mode=PropensityMode.KNOWN,
                   known_propensity=np.full(7, 0.5))


def test_extreme_known_propensity_is_clipped_in_pi_hat():
    rng = np.random.default_rng(19)
    n = 20
    data = make_dataset(rng, n=n, p=3)
    est = fit_regime(data, PenaltySpec("lasso", 0.1),
                     propensity_mode=PropensityMode.KNOWN,
                     known_propensity=np.full(n, 1e-4))
    np.testing.assert_array_equal(est.pi_hat, np.full(n, 0.01))


def test_penalties_argument_validation():
    rng = np.random.default_rng(20)
    data = make_dataset(rng, n=20, p=3)
    with pytest.raises(ValueError, match="sequence of three"):
        fit_regime(data, (PenaltySpec("lasso", 0.1),) * 2)


def test_dataset_validation():
    rng = np.random.default_rng(21)
    dm = random_design(rng, 10, 3)
    with pytest.raises(ValueError, match="binary"):
        Dataset(np.zeros(10), np.full(10, 2.0), dm)
    with pytest.raises(ValueError, match="NaN"):
        Dataset(np.full(10, np.nan), np.zeros(10), dm)
    with pytest.raises(ValueError, match="length"):
        Dataset(np.zeros(9), np.zeros(10), dm)


def test_mode_name_parsing():
    assert PropensityMode.from_name("LOGISTIC") is PropensityMode.LOGISTIC
    assert PhiMode.from_name("zero") is PhiMode.ZERO
    with pytest.raises(ValueError, match="unknown propensity mode"):
        PropensityMode.from_name("oracle")
