import warnings

import numpy as np
import pytest

from faircompare.core import EmptyArm, EstimationConfig, make_rng, split_folds, validate_dataset
from faircompare.nuisance import (
    FoldArmEmpty,
    SeparationWarning,
    corrupt_nuisances,
    crossfit_nuisances,
    error_directions,
    fit_outcome,
    fit_outcome_model,
    fit_propensity,
    oracle_nuisances,
    positivity_summary,
)


def test_intercept_only_matches_frequencies():
    rng = make_rng(0, 1)
    n = 2000
    arms = rng.choice(3, size=n, p=[0.2, 0.3, 0.5])
    x = rng.normal(size=(n, 2))
    freq = np.bincount(arms, minlength=3) / n
    # a constant covariate leaves only the intercepts, whose MLE is the log frequency ratio
    const = fit_propensity(np.ones((n, 1)), arms, 3)
    assert const.converged
    np.testing.assert_allclose(const.predict(np.ones((5, 1))), np.broadcast_to(freq, (5, 3)), atol=1e-8)
    # with irrelevant covariates the score equations still match the margins
    model = fit_propensity(x, arms, 3)
    np.testing.assert_allclose(model.predict(x).mean(axis=0), freq, atol=1e-6)


def test_logistic_slope_recovered():
    rng = make_rng(0, 2)
    n = 5000
    x = rng.normal(size=(n, 1))
    p1 = 1 / (1 + np.exp(-(0.3 + 1.0 * x[:, 0])))
    arms = (rng.random(n) < p1).astype(int)
    model = fit_propensity(x, arms, 2)
    assert model.coefficients[0].tolist() == [0.0, 0.0]
    assert model.coefficients[1, 1] == pytest.approx(1.0, abs=0.1)
    assert model.coefficients[1, 0] == pytest.approx(0.3, abs=0.1)


def test_newton_ascends_monotonically():
    rng = make_rng(0, 3)
    x = rng.normal(size=(800, 3))
    eta = x @ rng.normal(size=(3, 4))
    arms = np.array([rng.choice(4, p=np.exp(e) / np.exp(e).sum()) for e in eta])
    model = fit_propensity(x, arms, 4)
    assert model.converged and model.final_gradient_norm < 1e-8
    assert np.all(np.diff(model.objective_trace) >= 0)


def test_absent_arm_rejected():
    with pytest.raises(EmptyArm):
        fit_propensity(np.zeros((4, 1)), np.array([0, 0, 2, 2]), 3)


def test_separation_warns():
    x = np.concatenate([np.linspace(-2, -1, 20), np.linspace(1, 2, 20)])[:, None]
    arms = np.repeat([0, 1], 20)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit_propensity(x, arms, 2, penalty=0.0, max_iter=200)
    assert any(issubclass(w.category, SeparationWarning) for w in caught) or model.predict(x).min() < 1e-6


def test_linear_outcome_exact():
    x = np.linspace(-1, 1, 11)[:, None]
    m = fit_outcome(x, 2 + 3 * x[:, 0], "linear")
    np.testing.assert_allclose(m.coefficients, [2.0, 3.0], atol=1e-8)


@pytest.mark.parametrize("method", ["linear", "knn"])
def test_constant_outcome(method):
    x = make_rng(0, 4).normal(size=(30, 2))
    m = fit_outcome(x, np.full(30, 0.7), method)
    np.testing.assert_allclose(m.predict(make_rng(1, 4).normal(size=(9, 2))), 0.7, atol=1e-8)


def test_knn_single_row():
    m = fit_outcome(np.array([[0.5, 1.0]]), np.array([4.2]), "knn")
    np.testing.assert_array_equal(m.predict(np.array([[9.0, -3.0], [0.0, 0.0]])), [4.2, 4.2])


def test_outcome_model_absent_arm():
    with pytest.raises(EmptyArm):
        fit_outcome_model(np.zeros((4, 1)), np.array([0, 0, 1, 1]), np.ones(4), 3)


def _toy(n=400, d=3, seed=0):
    rng = make_rng(seed, 5)
    x = rng.normal(size=(n, 2))
    arms = rng.integers(d, size=n)
    y = x[:, 0] + arms + rng.normal(size=n)
    return validate_dataset(x, arms, y)


def test_crossfit_deterministic_and_read_only():
    data = _toy()
    cfg = EstimationConfig(seed=3)
    a, b = crossfit_nuisances(data, cfg), crossfit_nuisances(data, cfg)
    assert np.array_equal(a.pi_hat, b.pi_hat) and np.array_equal(a.mu_hat, b.mu_hat)
    np.testing.assert_allclose(a.pi_hat.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        a.pi_hat[0, 0] = 1.0
    assert all(f["converged"] for f in a.diagnostics["folds"])


def test_out_of_fold_purity():
    data = _toy()
    cfg = EstimationConfig(seed=1)
    folds = split_folds(data.n, 2, 1)
    base = crossfit_nuisances(data, cfg, folds)
    test = folds.fold_of == 0
    y = data.outcomes.copy()
    y[test] = 1e3 * make_rng(9).normal(size=test.sum())
    a = data.treatments.copy()
    a[test] = make_rng(10).permutation(a[test])
    moved = crossfit_nuisances(validate_dataset(data.covariates, a, y), cfg, folds)
    assert np.array_equal(base.pi_hat[test], moved.pi_hat[test])
    assert np.array_equal(base.mu_hat[test], moved.mu_hat[test])


def test_smallest_balanced_run():
    d = 3
    x = np.arange(4 * d, dtype=float)[:, None]
    arms = np.tile(np.arange(d), 4)
    data = validate_dataset(x, arms, x[:, 0] * 0.1)
    fits = crossfit_nuisances(data, EstimationConfig(seed=0))
    assert fits.pi_hat.shape == (12, 3) and np.all(np.isfinite(fits.mu_hat))


def test_fold_missing_arm():
    x = np.arange(6, dtype=float)[:, None]
    arms = np.array([0, 0, 0, 0, 0, 1])
    data = validate_dataset(x, arms, np.ones(6))
    with pytest.raises(FoldArmEmpty):
        crossfit_nuisances(data, EstimationConfig(seed=0))


def test_oracle_passthrough_and_positivity_summary():
    pi = np.array([[0.0, 1.0], [0.5, 0.5], [1e-9, 1 - 1e-9]])
    mu = np.ones((3, 2))
    fits = oracle_nuisances(pi, mu)
    assert fits.source == "oracle" and np.array_equal(fits.pi_hat, pi)
    s = positivity_summary(pi, 1e-8)
    assert s["zero_propensity_cells"] == 1 and s["sub_floor_cells"] == 2
    assert s["all_arms_positive_fraction"] == pytest.approx(2 / 3)


def test_corruption_keeps_zeros_and_scale():
    pi = np.array([[0.0, 0.4, 0.6], [0.2, 0.3, 0.5]])
    mu = np.zeros((2, 3))
    e_pi, e_mu = error_directions(pi.shape, 0)
    for eps in (0.1, 0.01):
        p, m = corrupt_nuisances(pi, mu, eps, e_pi, e_mu)
        assert p[0, 0] == 0.0
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
        assert np.max(np.abs(p - pi)) <= 3 * eps * np.abs(e_pi).max()
        np.testing.assert_allclose(m, eps * e_mu)
