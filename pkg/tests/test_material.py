import math
import warnings

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

import oracles
from kirigami.material import CutoffWarning, MaterialModel, PdeType, PoleError, rotation

AUX = MaterialModel(-0.9, 0.9)
NON = MaterialModel(-0.9, 0.0)
MIX = MaterialModel(-1.6, 0.4, xi_minus=-math.pi / 6)


@given(a=st.floats(-3, 0), b=st.floats(0, 3))
def test_mu_at_zero(a, b):
    m = MaterialModel(a, b, 0.0, 0.0)
    assert m.mu1(0.0) == 1.0 and m.mu2(0.0) == 1.0
    assert m.gamma12(0.0) == pytest.approx(a, abs=1e-15)
    assert m.gamma21(0.0) == pytest.approx(b, abs=1e-15)


def test_mu_examples():
    assert NON.mu1(math.pi / 2) == pytest.approx(0.9, abs=1e-15)
    assert MIX.mu1(math.pi / 3) == pytest.approx(0.5 + 1.6 * math.sqrt(3) / 2, rel=1e-15)
    assert MIX.mu1(math.pi / 3) == pytest.approx(1.885640, abs=1e-6)


def test_derivatives_of_mu():
    xs = np.linspace(-0.7, 1.0, 11)
    h = 1e-6
    for m in (AUX, NON, MIX):
        for f, df in ((m.mu1, m.dmu1), (m.mu2, m.dmu2)):
            fd = (f(xs + h) - f(xs - h)) / (2 * h)
            assert np.allclose(df(xs), fd, atol=1e-9)


def test_gamma21_auxetic_quarter_pi():
    assert AUX.gamma21(math.pi / 4) == pytest.approx(-0.1 / 1.9, rel=1e-14)


def test_gamma21_sign_without_beta():
    xs = np.linspace(1e-6, math.pi / 3, 20_000)
    assert np.all(NON.gamma21(xs) < 0)


def test_pole_reported_below_threshold():
    m = MaterialModel(-0.9, 0.9)
    root = -math.atan(1 / 0.9)
    with pytest.raises(PoleError, match="mu2 vanishes"):
        m.gamma12(np.array([root]))


def test_b_hat_examples():
    d = AUX.b_hat(0.0)
    assert (d.d11, d.d22) == (pytest.approx(-0.9), pytest.approx(-0.9))
    assert AUX.b_hat(10.0) == AUX.b_hat(AUX.xi_plus)
    # symbolic oracle at pi/6 for the non-auxetic pair
    exact = oracles.b_hat_symbolic_exact(sympy.pi / 6, sympy.Rational(-9, 10), 0)
    d = NON.b_hat(math.pi / 6)
    assert d.d11 == pytest.approx(float(exact[0]), rel=1e-14)
    assert d.d22 == pytest.approx(float(exact[1]), rel=1e-14)
    assert d.d11 == pytest.approx(0.5 / (math.cos(math.pi / 6) + 0.45), rel=1e-14)


def test_b_hat_matches_symbolic_oracle():
    rng = np.random.default_rng(3)
    xs = rng.uniform(-2, 2, 2000)
    for m in (AUX, NON, MIX):
        d = m.b_hat(xs)
        o11, o22 = oracles.b_hat(xs, m.alpha, m.beta, m.xi_minus, m.xi_plus)
        assert np.allclose(d.d11, o11, rtol=1e-12, atol=1e-14)
        assert np.allclose(d.d22, o22, rtol=1e-12, atol=1e-14)


def test_db_hat_outside_is_zero():
    for m in (AUX, NON, MIX):
        assert m.db_hat_dxi(m.xi_plus + 0.1) == (0.0, 0.0)
        assert m.db_hat_dxi(m.xi_minus - 3.0) == (0.0, 0.0)


def test_db_hat_at_zero_matches_central_difference():
    h = 1e-6
    d = AUX.db_hat_dxi(0.0)
    up, dn = AUX.b_hat(h), AUX.b_hat(-h)
    assert d.d11 == pytest.approx((up.d11 - dn.d11) / (2 * h), rel=1e-6)
    assert d.d22 == pytest.approx((up.d22 - dn.d22) / (2 * h), rel=1e-6)


def test_db_hat_one_sided_at_kinks():
    o = oracles.db_hat(np.array([AUX.xi_minus, AUX.xi_plus]), -0.9, 0.9, AUX.xi_minus, AUX.xi_plus)
    d = AUX.db_hat_dxi(np.array([AUX.xi_minus, AUX.xi_plus]))
    assert np.allclose(d.d11, o[0]) and np.allclose(d.d22, o[1])
    assert np.all(np.abs(d.d11) > 0)


def test_symmetric_case_has_equal_derivatives():
    m = MaterialModel(-0.7, 0.7)
    d = m.db_hat_dxi(0.0)
    assert d.d11 == pytest.approx(d.d22, rel=1e-14)
    xs = np.linspace(-0.7, 1.0, 101)
    assert np.allclose(m.mu1(xs), m.mu2(xs), rtol=0, atol=1e-15)
    assert np.allclose(m.gamma12(xs), -m.gamma21(xs), rtol=1e-13, atol=1e-15)


def test_clamp_idempotent():
    xs = np.random.default_rng(0).uniform(-10, 10, 10_000)
    for m in (AUX, NON, MIX):
        a, b = m.b_hat(xs), m.b_hat(m.clamp(xs))
        assert np.array_equal(a.d11, b.d11) and np.array_equal(a.d22, b.d22)


def test_uniform_bound():
    xs = np.random.default_rng(1).uniform(-10, 10, 100_000)
    for m in (AUX, NON, MIX):
        d = m.b_hat(xs)
        assert max(np.abs(d.d11).max(), np.abs(d.d22).max()) <= m.M


def test_lipschitz():
    rng = np.random.default_rng(2)
    x1, x2 = rng.uniform(-2, 2, (2, 50_000))
    for m in (AUX, NON, MIX):
        a, b = m.b_hat(x1), m.b_hat(x2)
        gap = np.abs(x1 - x2)
        assert np.all(np.abs(a.d11 - b.d11) <= m.K * gap + 1e-15)
        assert np.all(np.abs(a.d22 - b.d22) <= m.K * gap + 1e-15)


def test_derivative_consistency():
    rng = np.random.default_rng(4)
    h = 1e-6
    for m in (AUX, NON, MIX):
        xs = rng.uniform(m.xi_minus + 1e-3, m.xi_plus - 1e-3, 100)
        d = m.db_hat_dxi(xs)
        up, dn = m.b_hat(xs + h), m.b_hat(xs - h)
        for exact, fd in ((d.d11, (up.d11 - dn.d11) / (2 * h)), (d.d22, (up.d22 - dn.d22) / (2 * h))):
            rel = np.abs(exact - fd) / np.maximum(np.abs(exact), 1e-8)
            assert rel.max() <= 1e-5


def test_a_eff_examples():
    assert AUX.a_eff(0.0) == (1.0, 1.0)
    d = AUX.a_eff(math.pi / 3)
    assert d.d11 == pytest.approx(1.2794, abs=1e-4) and d.d22 == pytest.approx(d.d11)
    d = MIX.a_eff(math.pi / 4)
    assert (d.d11, d.d22) == (pytest.approx(1.8385, abs=1e-4), pytest.approx(0.9899, abs=1e-4))


def test_a_eff_warns_outside_cutoff_and_uses_raw_value():
    with pytest.warns(CutoffWarning):
        d = AUX.a_eff(1.3)
    assert d.d11 == pytest.approx(math.cos(1.3) + 0.9 * math.sin(1.3))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        AUX.a_eff(0.5)


def test_rotation_examples():
    assert np.array_equal(rotation(0.0), np.eye(2))
    assert np.allclose(rotation(math.pi / 2), [[0, -1], [1, 0]], atol=1e-16)
    g = np.random.default_rng(5).uniform(-10, 10, 1000)
    R = rotation(g)
    assert R.shape == (1000, 2, 2)
    assert np.allclose(R @ rotation(-g), np.eye(2), atol=1e-14)
    assert np.allclose(R @ np.swapaxes(R, -1, -2), np.eye(2), atol=1e-14)
    assert np.allclose(np.linalg.det(R), 1.0, atol=1e-14)


def test_classify_examples():
    for x in (0.1, 0.5, 1.0):
        assert AUX.classify_type(x) is PdeType.ELLIPTIC
    assert NON.classify_type(0.0) is PdeType.DEGENERATE
    assert NON.classify_type(math.pi / 6) is PdeType.HYPERBOLIC


def test_type_census():
    xs = np.linspace(-0.5, 1.0, 301)
    census = MIX.type_census(xs)
    assert sum(census.values()) == xs.size
    assert census[PdeType.ELLIPTIC] > 0 and census[PdeType.HYPERBOLIC] > 0
    for x in xs[::37]:
        census_one = MIX.type_census([x])
        assert census_one[MIX.classify_type(x)] == 1


def test_validate_auxetic_bounds():
    xs = np.linspace(AUX.xi_minus, AUX.xi_plus, 1_000_003)
    d = oracles.b_hat(xs, -0.9, 0.9, AUX.xi_minus, AUX.xi_plus)
    sup = max(np.abs(d[0]).max(), np.abs(d[1]).max())
    assert sup <= AUX.M <= 1.0101 * sup


def test_validate_reports_pole_location():
    with pytest.raises(PoleError, match=r"pole of Gamma: .*mu2 vanishes near xi = -0\.8380"):
        MaterialModel(-0.9, 0.9, xi_minus=-1.2)


def test_preset_mixed_default_interval_has_pole():
    # the mixed pair is not pole free on the generic default interval
    with pytest.raises(PoleError, match="mu1 vanishes near xi = -0.5586"):
        MaterialModel(-1.6, 0.4)


def test_single_point_interval():
    m = MaterialModel(-0.9, 0.4, 0.0, 0.0)
    assert m.M >= max(0.9, 0.4)
    assert m.M == pytest.approx(max(0.9, 0.4), rel=0.011)
    assert m.b_hat(5.0) == m.b_hat(-5.0)
    assert m.db_hat_dxi(0.0) == (0.0, 0.0)


@pytest.mark.parametrize("kw", [dict(alpha=0.1, beta=0.0), dict(alpha=0.0, beta=-0.1),
                                dict(alpha=0.0, beta=0.0, xi_minus=0.2),
                                dict(alpha=0.0, beta=0.0, xi_plus=2.0),
                                dict(alpha=float("nan"), beta=0.0)])
def test_invalid_parameters(kw):
    with pytest.raises(ValueError):
        MaterialModel(**kw)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-2.5, 0), b=st.floats(0, 2.5))
def test_validation_agrees_with_dense_scan(a, b):
    lo, hi = -math.pi / 4, math.pi / 3
    xs = np.linspace(lo, hi, 200_001)
    mu1 = np.cos(xs) - a * np.sin(xs)
    mu2 = np.cos(xs) + b * np.sin(xs)
    pole_free = mu1.min() > 1e-6 and mu2.min() > 1e-6
    definitely_pole = mu1.min() < -1e-6 or mu2.min() < -1e-6
    try:
        MaterialModel(a, b, lo, hi)
        ok = True
    except PoleError:
        ok = False
    if pole_free:
        assert ok
    if definitely_pole:
        assert not ok
