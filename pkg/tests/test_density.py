import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from riwtl import density as dn

INV_SQRT_2PI = 0.3989422804014327


def test_kde_examples():
    assert dn.kde_fit([0.0], 1.0)(0.0) == pytest.approx(INV_SQRT_2PI, abs=1e-6)
    assert dn.kde_fit([-1.0, 1.0], 1.0)(0.0) == pytest.approx(INV_SQRT_2PI * np.exp(-0.5), abs=1e-6)
    d = dn.kde_fit([-0.7, 0.7], 0.3)
    t = np.linspace(-3, 3, 101)
    np.testing.assert_allclose(d(t), d(-t), atol=1e-15)


def test_kde_rejects_bad_input():
    with pytest.raises(ValueError):
        dn.kde_fit([], 0.2)
    with pytest.raises(ValueError):
        dn.kde_fit([1.0], 0.0)
    with pytest.raises(ValueError):
        dn.kde_fit([np.inf], 0.2)


def test_eval_examples():
    assert dn.uniform(3)(2.0) == pytest.approx(1 / 6)
    assert dn.uniform(3)(4.0) == 0.0
    assert dn.gaussian(1.0)(0.0) == pytest.approx(0.398942, abs=1e-6)
    with pytest.raises(ValueError):
        dn.uniform(0)


def test_symmetrize_examples():
    sym = dn.kde_fit([-1.0, 1.0], 0.4)
    t = np.random.default_rng(0).normal(0, 2, 50)
    np.testing.assert_allclose(dn.symmetrize(sym)(t), sym(t), atol=1e-12)
    g = dn.gaussian(1.3)
    np.testing.assert_allclose(dn.symmetrize(g)(t), g(t), atol=1e-15)
    two = dn.kde_fit([0.0, 2.0], 0.5)
    assert dn.symmetrize(two)(2.0) == pytest.approx(0.5 * (two(2.0) + two(-2.0)), abs=1e-15)


def test_gaussian_fit_examples():
    assert dn.gaussian_fit([1.0, -1.0]).sigma == pytest.approx(1.0)
    assert dn.gaussian_fit([2.0, -2.0]).sigma == pytest.approx(2.0)
    s = dn.gaussian_fit(np.random.default_rng(5).standard_normal(100_000)).sigma
    assert 0.99 <= s <= 1.01
    assert dn.gaussian_fit([0.0, 0.0]).sigma == dn.SIGMA_FLOOR
    with pytest.raises(ValueError):
        dn.gaussian_fit([1.0])


def test_truncated_first_moment_examples():
    assert abs(dn.truncated_first_moment(dn.uniform(2.0), 1.5)) <= 1e-12
    lopsided = dn.kde_fit([0.5], 1.0)
    got = dn.truncated_first_moment(lopsided, 2.0)
    want = integrate.quad(lambda t: t * lopsided(t), -2, 2, epsabs=1e-13)[0]
    assert got > 0
    assert got == pytest.approx(want, rel=1e-8)


residual_sets = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30)
bandwidths = st.floats(0.05, 2.0)


@given(residual_sets, bandwidths)
def test_kde_nonnegative_and_normalized(res, b):
    d = dn.kde_fit(res, b)
    R = max(abs(r) for r in res) + 8 * b
    t = np.linspace(-R - 1, R + 1, 200)
    assert np.all(d(t) >= 0)
    total = integrate.quad(d, -R, R, points=sorted(set(res)), limit=200)[0]
    assert abs(total - 1) <= 1e-3


@given(residual_sets, bandwidths, st.integers(0, 1000))
def test_symmetrize_properties(res, b, seed):
    d = dn.kde_fit(res, b)
    s = dn.symmetrize(d)
    t = np.random.default_rng(seed).normal(0, 3, 200)
    np.testing.assert_allclose(s(t), s(-t), atol=1e-12, rtol=0)
    np.testing.assert_allclose(dn.symmetrize(s)(t), s(t), atol=1e-12, rtol=0)
    for A in (0.5, 1.0, 2.0, 4.0):
        assert abs(dn.truncated_first_moment(s, A)) <= 1e-8


def test_silverman_positive():
    assert dn.silverman_bandwidth(np.random.default_rng(1).standard_normal(500)) > 0
