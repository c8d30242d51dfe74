"""Space-time test functions with analytic derivatives.

All callables take ``(t, x)`` and broadcast.  ``antiderivative`` is
``x -> int_{-inf}^x f(t, y) dy`` and is needed only by observables that are
integrated exactly against empirical CDFs.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    f: object
    f_t: object
    f_x: object
    f_xx: object
    support: tuple
    antiderivative: object = None
    f_xt: object = None

    __test__ = False  # keep pytest from collecting this class

    def __call__(self, t, x):
        return self.f(t, x)

    def scaled(self, c):
        c = float(c)
        wrap = (lambda g: None if g is None else (lambda t, x: c * g(t, x)))
        return TestFunction(wrap(self.f), wrap(self.f_t), wrap(self.f_x), wrap(self.f_xx),
                            self.support, wrap(self.antiderivative), wrap(self.f_xt))


def zero(support=(-1.0, 1.0)):
    z = lambda t, x: np.zeros(np.broadcast(t, x).shape)
    return TestFunction(z, z, z, z, support, z, z)


def _poly_bump_parts(u, order):
    # phi(u) = (1 - u^2)^4 on |u| < 1; C^3 across the support boundary
    # order 0..2: phi and its derivatives; order -1: antiderivative from u = -1
    if order == -1:
        uc = np.clip(u, -1.0, 1.0)
        u2 = uc * uc
        val = uc * (1 + u2 * (-4 / 3 + u2 * (6 / 5 + u2 * (-4 / 7 + u2 / 9)))) + 128.0 / 315.0
        return np.where(u <= -1.0, 0.0, val)
    inside = np.abs(u) < 1.0
    w = np.where(inside, 1.0 - u * u, 0.0)
    if order == 0:
        return (w * w) ** 2
    if order == 1:
        return -8.0 * u * w ** 3
    return np.where(inside, -8.0 * w ** 3 + 48.0 * u * u * w ** 2, 0.0)


def bump(center=0.0, half_width=1.0, amplitude=1.0, rate=0.0):
    """Compactly supported polynomial bump, optionally modulated in time.

    ``f(t, x) = amplitude * (1 + rate * t) * (1 - ((x - center)/half_width)^2)^4``
    on ``|x - center| < half_width`` and zero outside.
    """
    c, h, A, k = float(center), float(half_width), float(amplitude), float(rate)

    def parts(x, order):
        return _poly_bump_parts((np.asarray(x, dtype=float) - c) / h, order)

    g = lambda t: A * (1.0 + k * np.asarray(t, dtype=float))
    g_t = A * k

    def f(t, x):
        return g(t) * parts(x, 0)

    def f_t(t, x):
        return g_t * parts(x, 0) + 0.0 * np.asarray(t, dtype=float)

    def f_x(t, x):
        return g(t) * parts(x, 1) / h

    def f_xx(t, x):
        return g(t) * parts(x, 2) / (h * h)

    def f_xt(t, x):
        return g_t * parts(x, 1) / h + 0.0 * np.asarray(t, dtype=float)

    def anti(t, x):
        return g(t) * h * parts(x, -1)

    return TestFunction(f, f_t, f_x, f_xx, (c - h, c + h), anti, f_xt)


def sine_window(x1, x2, t_rate=0.0):
    """``sin(pi (x - x1)/(x2 - x1)) * (1 + t_rate * t)``, vanishing at ``x1``, ``x2``."""
    x1, x2, k = float(x1), float(x2), float(t_rate)
    L = x2 - x1
    w = np.pi / L

    def g(t):
        return 1.0 + k * np.asarray(t, dtype=float)

    def f(t, x):
        return g(t) * np.sin(w * (x - x1))

    def f_t(t, x):
        return k * np.sin(w * (x - x1)) + 0.0 * np.asarray(t, dtype=float)

    def f_x(t, x):
        return g(t) * w * np.cos(w * (x - x1))

    def f_xx(t, x):
        return -g(t) * w * w * np.sin(w * (x - x1))

    return TestFunction(f, f_t, f_x, f_xx, (x1, x2))
