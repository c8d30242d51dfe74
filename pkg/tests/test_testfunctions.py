import numpy as np
import pytest
from scipy import integrate

from rankflux import testfunctions as tf

X = np.linspace(-2.0, 2.0, 801)


@pytest.mark.parametrize("fn", [tf.bump(0.3, 1.5, 2.0, 0.5), tf.sine_window(-1.0, 2.0, 0.7)])
def test_derivatives_match_finite_differences(fn):
    t, h = 0.4, 1e-5
    x = np.linspace(fn.support[0] + 0.01, fn.support[1] - 0.01, 97)
    np.testing.assert_allclose(fn.f_x(t, x), (fn(t, x + h) - fn(t, x - h)) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(fn.f_xx(t, x), (fn.f_x(t, x + h) - fn.f_x(t, x - h)) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(fn.f_t(t, x), (fn(t + h, x) - fn(t - h, x)) / (2 * h), atol=1e-7)


def test_bump_support_and_smoothness():
    b = tf.bump(0.0, 1.0)
    assert np.all(b(0.0, np.array([-1.0, 1.0, 1.5, -3.0])) == 0.0)
    assert b(0.0, 0.0) == 1.0
    # value, slope and curvature vanish at the edge
    for g in (b.f, b.f_x, b.f_xx):
        assert abs(g(0.0, 1.0 - 1e-6)) < 1e-8


def test_bump_antiderivative_matches_quadrature():
    b = tf.bump(0.3, 1.5, 2.0, 0.5)
    for x in (-1.0, 0.1, 0.9, 2.5):
        ref = integrate.quad(lambda y: b(0.5, y), -1.2, min(x, 1.8))[0]
        assert b.antiderivative(0.5, x) == pytest.approx(ref, abs=1e-13)
    assert b.antiderivative(0.5, -5.0) == 0.0


def test_bump_mixed_derivative():
    b = tf.bump(0.0, 1.0, 1.0, 2.0)
    np.testing.assert_allclose(b.f_xt(0.3, X), 2.0 * b.f_x(0.0, X), atol=1e-14)


def test_scaled_and_zero():
    b = tf.bump(0.0, 1.0, 1.0, 0.5)
    s = b.scaled(-3.0)
    np.testing.assert_allclose(s.f_xx(0.2, X), -3.0 * b.f_xx(0.2, X))
    np.testing.assert_allclose(s.antiderivative(0.2, X), -3.0 * b.antiderivative(0.2, X))
    z = tf.zero()
    assert np.all(z.f_x(0.1, X) == 0.0) and z(0.0, X).shape == X.shape


def test_sine_window_has_no_antiderivative():
    assert tf.sine_window(0.0, 1.0).antiderivative is None
