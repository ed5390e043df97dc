import numpy as np
import pytest

from stealthlab.detect import (
    DetectorSpec,
    calibrate_threshold,
    chi2_statistic,
    estimate_roc,
    fit_exponent,
    llr_statistic,
)
from stealthlab.errors import ExponentUnfittable, SingularCovariance
from stealthlab.sim import AttackSpec, ExperimentConfig


def test_detector_spec_validation():
    with pytest.raises(ValueError):
        DetectorSpec("cusum")
    with pytest.raises(ValueError):
        DetectorSpec(window=0)
    with pytest.raises(ValueError):
        DetectorSpec(delta=1.0)
    DetectorSpec(threshold=3.0, delta=5.0)


def test_llr_identical_hypotheses_is_zero():
    z = np.random.default_rng(0).normal(size=(10, 2))
    assert llr_statistic(z, np.eye(2), np.eye(2)) == pytest.approx(0.0, abs=1e-14)


def test_llr_scalar():
    # One sample z = 0 under N(0, 2) against N(0, 1): -0.5 ln 2.
    assert llr_statistic(np.zeros((1, 1)), [[1.0]], [[2.0]]) == pytest.approx(-0.5 * np.log(2))
    z = np.array([[2.0]])
    expected = -0.5 * np.log(2) + 0.5 * 4 * (1 - 0.5)
    assert llr_statistic(z, [[1.0]], [[2.0]]) == pytest.approx(expected)


def test_llr_batch_axes():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(7, 5, 2))
    Sa = np.array([[2.0, 0.2], [0.2, 1.5]])
    batch = llr_statistic(z, np.eye(2), Sa)
    assert batch.shape == (7,)
    np.testing.assert_allclose(batch[3], llr_statistic(z[3], np.eye(2), Sa))


def test_llr_mean_under_alternative_is_kld():
    rng = np.random.default_rng(2)
    a = 3.0
    z = rng.normal(size=(200_000, 1, 1)) * np.sqrt(a)
    stat = llr_statistic(z, [[1.0]], [[a]])
    assert stat.mean() == pytest.approx(0.5 * (a - 1 - np.log(a)), rel=0.02)


def test_llr_singular():
    with pytest.raises(SingularCovariance):
        llr_statistic(np.zeros((1, 2)), np.eye(2), np.zeros((2, 2)))


def test_chi2():
    z = np.array([[1.0, 2.0], [0.0, 1.0]])
    assert chi2_statistic(z, np.diag([1.0, 4.0])) == pytest.approx(1 + 1 + 0.25)


def test_calibrate_threshold():
    s = np.arange(100.0)
    t = calibrate_threshold(s, 0.1)
    assert t == 10.0
    assert np.mean(s < t) <= 0.1
    assert calibrate_threshold(s[::-1], 0.1) == t


def test_fit_exponent():
    k = np.arange(1, 11)
    p = 0.5 * np.exp(-0.3 * k)
    slope, used = fit_exponent(k, p, trials=10_000)
    assert slope == pytest.approx(0.3, rel=1e-10)
    assert used[0] == 1
    with pytest.raises(ExponentUnfittable):
        fit_exponent([1, 2, 3], [1e-3, 1e-5, 0.0], trials=1000)


def test_identical_hypotheses_give_equal_rates(ex1):
    h0 = ExperimentConfig(ex1, horizon=200, runs=1, burn_in=20, seed=0)
    rep = estimate_roc(h0, h0, DetectorSpec("chi2"), horizons=[5, 20], trials=2000)
    for pf, pd in zip(rep.p_F, rep.p_D):
        assert pf == pytest.approx(pd, abs=0.04)
        assert pd >= 0.9
    assert rep.trials == 2000 and rep.horizons == (5, 20)


def test_roc_under_attack(ex1):
    h0 = ExperimentConfig(ex1, horizon=200, runs=1, burn_in=20, seed=0)
    h1 = ExperimentConfig(ex1, AttackSpec("a1", 1.0), horizon=200, runs=1, burn_in=20, seed=0)
    rep = estimate_roc(h0, h1, DetectorSpec("llr"), horizons=[2, 4, 6, 8], trials=3000)
    assert all(pd >= 0.9 - 0.02 for pd in rep.p_D)
    assert list(rep.p_F) == sorted(rep.p_F, reverse=True)
    assert rep.exponent_estimate is not None and rep.exponent_estimate > 0
    assert rep.stein_rate == pytest.approx(1.0, abs=0.1)
    fixed = estimate_roc(h0, h1, DetectorSpec("llr", threshold=rep.thresholds[0]), horizons=[2], trials=3000, strict=False)
    assert fixed.thresholds == (rep.thresholds[0],)


def test_roc_unfittable(ex1):
    h0 = ExperimentConfig(ex1, horizon=200, runs=1, burn_in=20, seed=0)
    h1 = ExperimentConfig(ex1, AttackSpec("a1", 20.0), horizon=200, runs=1, burn_in=20, seed=0)
    with pytest.raises(ExponentUnfittable):
        estimate_roc(h0, h1, DetectorSpec("llr"), horizons=[40, 50], trials=200)
    rep = estimate_roc(h0, h1, DetectorSpec("llr"), horizons=[40, 50], trials=200, strict=False)
    assert rep.exponent_estimate is None and rep.fit_horizons == ()
