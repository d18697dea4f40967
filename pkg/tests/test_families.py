import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faircompare.families import (
    BadOrder,
    InadmissibleFamily,
    ShiftFamily,
    SmoothingKernel,
    check_admissible,
    eval_f,
    eval_s,
    parse_family,
)

BUILTIN = [ShiftFamily("tsm")] + [ShiftFamily(t, dl) for t in ("multiplicative", "exp_tilt") for dl in (0.0, 0.25, 0.5, 0.9)]


def test_documented_values():
    assert eval_f(ShiftFamily("tsm"), 0.7) == 0.0
    m = ShiftFamily("multiplicative", 0.5)
    assert eval_f(m, 0.4) == pytest.approx(0.2)
    assert eval_f(m, 0.4, 1) == 0.5
    assert eval_f(m, 0.4, 2) == 0.0
    assert eval_f(ShiftFamily("exp_tilt", 0.5), 0.5) == pytest.approx(1 / 3)
    for fam in BUILTIN:
        assert eval_f(fam, 0.0) == 0.0


def test_kernel_values():
    k = SmoothingKernel(100.0)
    assert eval_s(k, 0.0) == 0.0
    assert eval_s(k, 0.1) == pytest.approx(1 - np.exp(-10), abs=1e-15)
    assert eval_s(k, 0.0, 1) == 100.0
    assert eval_s(k, 0.02, 2) == pytest.approx(-1e4 * np.exp(-2))


@pytest.mark.parametrize("fam", BUILTIN, ids=lambda f: f.label)
def test_admissible_on_grid(fam):
    check_admissible(fam)
    x = np.linspace(0, 1, 1002)[1:-1]
    fx = eval_f(fam, x)
    assert np.all(fx >= 0) and np.all(fx < x)


@pytest.mark.parametrize("fam", BUILTIN + [ShiftFamily("identity")], ids=lambda f: f.label)
def test_derivatives_match_finite_differences(fam):
    x = np.linspace(0.05, 0.95, 37)
    h = 1e-5
    d1 = (eval_f(fam, x + h) - eval_f(fam, x - h)) / (2 * h)
    d2 = (eval_f(fam, x + h, 1) - eval_f(fam, x - h, 1)) / (2 * h)
    np.testing.assert_allclose(eval_f(fam, x, 1), d1, atol=1e-7)
    np.testing.assert_allclose(eval_f(fam, x, 2), d2, atol=1e-6)


def test_kernel_derivatives_match_finite_differences():
    k = SmoothingKernel(30.0)
    x = np.linspace(0.01, 0.99, 25)
    h = 1e-6
    np.testing.assert_allclose(eval_s(k, x, 1), (eval_s(k, x + h) - eval_s(k, x - h)) / (2 * h), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(eval_s(k, x, 2), (eval_s(k, x + h, 1) - eval_s(k, x - h, 1)) / (2 * h), rtol=1e-5, atol=1e-6)


@given(x=st.floats(1e-6, 1.0), k1=st.floats(1.0, 1e3), k2=st.floats(1.0, 1e3))
def test_kernel_monotone_in_k(x, k1, k2):
    lo, hi = sorted((k1, k2))
    assert eval_s(SmoothingKernel(lo), x) <= eval_s(SmoothingKernel(hi), x)


@given(x=st.floats(0.0, 1.0), delta=st.floats(0.0, 1.0))
@settings(max_examples=200)
def test_exp_tilt_between_zero_and_identity(x, delta):
    fx = float(eval_f(ShiftFamily("exp_tilt", delta), x))
    assert 0.0 <= fx <= x + 1e-15


def test_delta_one_is_identity():
    x = np.linspace(0, 1, 11)
    for tag in ("multiplicative", "exp_tilt"):
        np.testing.assert_allclose(eval_f(ShiftFamily(tag, 1.0), x), x)


def test_bad_inputs():
    with pytest.raises(BadOrder):
        eval_f(ShiftFamily("tsm"), 0.5, 3)
    with pytest.raises(ValueError):
        ShiftFamily("quadratic")
    with pytest.raises(ValueError):
        ShiftFamily("multiplicative", 1.2)
    with pytest.raises(ValueError):
        SmoothingKernel(0.0)
    with pytest.raises(ValueError):
        parse_family("exp_tilt")


def test_parse_family():
    assert parse_family("multiplicative:0.9") == ShiftFamily("multiplicative", 0.9)
    assert parse_family("exp_tilt", 0.5) == ShiftFamily("exp_tilt", 0.5)
    assert parse_family("tsm").label == "tsm"
    assert parse_family("exp_tilt:0.5").label == "exp_tilt:0.5"


def test_custom_family_from_expression():
    fam = ShiftFamily.from_expression("delta * x**2", 0.5)
    x = np.array([0.2, 0.6])
    np.testing.assert_allclose(eval_f(fam, x), 0.5 * x**2)
    np.testing.assert_allclose(eval_f(fam, x, 1), x)
    np.testing.assert_allclose(eval_f(fam, x, 2), [1.0, 1.0])
    with pytest.raises(InadmissibleFamily):
        ShiftFamily.from_expression("2 * x")
