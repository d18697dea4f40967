import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from faircompare.families import ShiftFamily, SmoothingKernel
from faircompare.interventions import (
    InterventionalPropensities,
    PropensityMatrix,
    all_targets,
    check_property_1,
    check_property_2,
    check_q_weak_positivity,
    interventional_propensity,
    rho,
    smooth_trim_score,
)

K100 = SmoothingKernel(100.0)
FAMILIES = [ShiftFamily("tsm")] + [ShiftFamily(t, dl) for t in ("multiplicative", "exp_tilt") for dl in (0.0, 0.25, 0.5, 0.9)]


def test_rho_examples():
    np.testing.assert_array_equal(rho(np.array([[0.3, 0.7]]), ShiftFamily("tsm"), 0), [[1.0, 0.0]])
    r = rho(np.array([[0.2, 0.3, 0.5]]), ShiftFamily("multiplicative", 0.5), 0)
    np.testing.assert_allclose(r, [[0.6, 0.15, 0.25]], atol=1e-15)
    pi = np.array([[0.2, 0.3, 0.5], [0.0, 0.4, 0.6]])
    for a in range(3):
        np.testing.assert_allclose(rho(pi, ShiftFamily("identity"), a), pi, atol=1e-15)


def test_trim_score_examples():
    assert smooth_trim_score(np.array([[0.5, 0.5, 0.0]]), K100)[0] == 0.0
    s = smooth_trim_score(np.array([[0.5, 0.5]]), K100)[0]
    assert s == pytest.approx(1 - 2 * np.exp(-50), abs=1e-15)
    row = np.array([[0.01, 0.99]])
    vals = [smooth_trim_score(row, SmoothingKernel(k))[0] for k in (1e1, 1e2, 1e3, 1e4)]
    assert np.all(np.diff(vals) > 0) and 1 - vals[-1] < 1e-40


def test_q_tsm_binary():
    ip = interventional_propensity(np.array([[0.3, 0.7]]), ShiftFamily("tsm"), K100, 0)
    s = (1 - np.exp(-30)) * (1 - np.exp(-70))
    np.testing.assert_allclose(ip.q, [[s + (1 - s) * 0.3, (1 - s) * 0.7]], atol=1e-15)


def test_q_equals_pi_on_zero_rows(pi_with_zeros):
    zero_rows = np.any(pi_with_zeros == 0, axis=1)
    assert zero_rows.any()
    for fam in FAMILIES:
        for ip in all_targets(pi_with_zeros, fam, K100):
            assert np.array_equal(ip.q[zero_rows], pi_with_zeros[zero_rows])


def test_identity_family_changes_nothing(pi_with_zeros):
    for ip in all_targets(pi_with_zeros, ShiftFamily("identity"), K100):
        np.testing.assert_allclose(ip.q, pi_with_zeros, atol=1e-15)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.label)
def test_properties_hold_for_builtins(fam, pi_with_zeros):
    ips = all_targets(pi_with_zeros, fam, K100)
    assert check_property_1(ips, pi_with_zeros)
    for qa, qb in itertools.combinations(ips, 2):
        assert check_property_2(qa, qb)
    for ip in ips:
        assert check_q_weak_positivity(ip, pi_with_zeros)
        np.testing.assert_allclose(ip.q.sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(ip.rho.sum(axis=1), 1.0, atol=1e-10)


def test_property_negative_controls(pi_with_zeros):
    ips = all_targets(pi_with_zeros, ShiftFamily("identity"), K100)
    assert not check_property_1(ips, pi_with_zeros)

    pi = pi_with_zeros.copy()
    pi[:, 1] = 0.0
    pi[:, 0] += 0.1
    pi /= pi.sum(axis=1, keepdims=True)
    report = check_property_1(all_targets(pi, ShiftFamily("tsm"), K100), pi)
    assert not report and any("target 1" in f for f in report.failures)

    ips = all_targets(pi_with_zeros, ShiftFamily("multiplicative", 0.5), K100)
    bad = ips[1].q.copy()
    bad[5, 2] += 0.01
    corrupted = InterventionalPropensities(bad, 1, ips[1].trim_score, ips[1].rho)
    rep = check_property_2(ips[0], corrupted)
    assert not rep and rep.worst == pytest.approx(0.01)

    q = ips[0].q.copy()
    i, b = np.argwhere(pi_with_zeros == 0)[0]
    q[i, b] = 0.1
    assert not check_q_weak_positivity(q, pi_with_zeros)
    full = np.full((3, 3), 1 / 3)
    assert check_q_weak_positivity(full, full)


def test_property_2_vacuous_for_two_arms():
    ips = all_targets(np.array([[0.3, 0.7], [0.6, 0.4]]), ShiftFamily("exp_tilt", 0.5), K100)
    assert check_property_2(ips[0], ips[1])
    with pytest.raises(ValueError):
        check_property_2(ips[0], ips[0])


def test_propensity_matrix_validation():
    PropensityMatrix(np.array([[0.2, 0.8]]))
    with pytest.raises(ValueError):
        PropensityMatrix(np.array([[0.2, 0.7]]))
    with pytest.raises(ValueError):
        PropensityMatrix(np.array([[-0.1, 1.1]]))


def _stochastic_rows(raw):
    raw = np.where(raw < 0.2, 0.0, raw)
    raw[:, 0] += 0.05
    return raw / raw.sum(axis=1, keepdims=True)


@given(
    raw=arrays(np.float64, (6, 4), elements=st.floats(0.0, 1.0)),
    delta=st.floats(0.0, 0.99),
    k=st.sampled_from([10.0, 100.0, 1000.0]),
    tag=st.sampled_from(["tsm", "multiplicative", "exp_tilt"]),
    target=st.integers(0, 3),
)
@settings(max_examples=150, deadline=None)
def test_row_stochastic_and_monotone(raw, delta, k, tag, target):
    pi = _stochastic_rows(raw)
    ip = interventional_propensity(pi, ShiftFamily(tag, delta), SmoothingKernel(k), target)
    np.testing.assert_allclose(ip.q.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(ip.q >= -1e-15)
    assert np.all(ip.q[:, target] >= pi[:, target] - 1e-12)


def test_q_lipschitz_in_pi(rng):
    # q is smooth in pi: small perturbations give proportionally small changes
    pi = rng.dirichlet(np.ones(4), size=50)
    fam = ShiftFamily("exp_tilt", 0.5)
    direction = rng.normal(size=pi.shape)
    direction -= direction.mean(axis=1, keepdims=True)
    for h in (1e-4, 1e-6):
        q0 = interventional_propensity(pi, fam, K100, 2).q
        q1 = interventional_propensity(pi + h * direction, fam, K100, 2).q
        assert np.max(np.abs(q1 - q0)) <= 200 * h
