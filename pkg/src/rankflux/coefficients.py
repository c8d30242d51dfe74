"""Rank-dependent drift and diffusion coefficients and their antiderivatives.

A coefficient is a function on the quantile interval [0, 1].  The drift ``b``
and diffusion ``sigma`` are bundled in :class:`CoefficientPair`; the
porous-medium fluxes ``B(r) = int_0^r b`` and ``Sigma(r) = int_0^r sigma^2/2``
live in :class:`AntiderivativePair`.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigurationError, DomainError, EllipticityError

DEFAULT_QUADRATURE_CELLS = 4096
_CHECK_POINTS = np.linspace(0.0, 1.0, 1025)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class Coefficient:
    """A real function on [0, 1] with its derivative.

    ``integral`` and ``half_square_integral`` are optional closed forms of
    ``int_0^r f`` and ``int_0^r f^2 / 2``.  When absent, quadrature is used.
    """

    func: object
    deriv: object
    label: str
    integral: object = None
    half_square_integral: object = None
    table: tuple = None

    def __call__(self, a):
        return self.func(np.asarray(a, dtype=float))

    def prime(self, a):
        return self.deriv(np.asarray(a, dtype=float))

    def fingerprint(self):
        h = hashlib.sha256(self.label.encode())
        if self.table is not None:
            for arr in self.table:
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def constant(c=1.0):
    c = float(c)
    return Coefficient(
        func=lambda a: np.full(np.shape(a), c),
        deriv=lambda a: np.zeros(np.shape(a)),
        label=f"constant:{c!r}",
        integral=lambda r: c * r,
        half_square_integral=lambda r: 0.5 * c * c * r,
    )


def affine(c0, c1):
    c0, c1 = float(c0), float(c1)
    return Coefficient(
        func=lambda a: c0 + c1 * a,
        deriv=lambda a: np.full(np.shape(a), c1),
        label=f"affine:{c0!r},{c1!r}",
        integral=lambda r: c0 * r + 0.5 * c1 * r * r,
        half_square_integral=lambda r: 0.5 * (c0 * c0 * r + c0 * c1 * r * r + c1 * c1 * r ** 3 / 3.0),
    )


def linear():
    """The identity ``a -> a``."""
    c = affine(0.0, 1.0)
    return Coefficient(c.func, c.deriv, "linear", c.integral, c.half_square_integral)


def smooth_bump(base=1.0, height=0.5, width=0.25):
    """``base + height * exp(-((a - 1/2) / width)^2)``; smooth and positive for base > 0."""
    base, height, width = float(base), float(height), float(width)

    def f(a):
        return base + height * np.exp(-(((a - 0.5) / width) ** 2))

    def df(a):
        u = (a - 0.5) / width
        return -2.0 * height * u / width * np.exp(-u * u)

    return Coefficient(f, df, f"smooth-bump:{base!r},{height!r},{width!r}")


def from_table(a, values, label="table"):
    """Coefficient sampled on a grid of [0, 1], evaluated by monotone cubic interpolation."""
    a = np.asarray(a, dtype=float)
    values = np.asarray(values, dtype=float)
    if a.ndim != 1 or a.shape != values.shape or a.size < 2:
        raise ConfigurationError("coefficient table needs matching 1-d columns")
    if abs(a[0]) > 1e-12 or abs(a[-1] - 1.0) > 1e-12 or np.any(np.diff(a) <= 0):
        raise ConfigurationError("coefficient table must be increasing and span [0, 1]")
    interp = PchipInterpolator(a, values, extrapolate=True)
    dinterp = interp.derivative()
    anti = interp.antiderivative()
    return Coefficient(
        func=lambda x: interp(np.clip(x, 0.0, 1.0)),
        deriv=lambda x: dinterp(np.clip(x, 0.0, 1.0)),
        label=label,
        integral=lambda r: anti(r) - anti(0.0),
        table=(a, values),
    )


def load_table(path):
    """Read a two-column ``a,value`` table (header line, 1025 uniform rows)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().replace(" ", "")
        if header != "a,value":
            raise ConfigurationError(f"{path}:1: expected header 'a,value', got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (1025, 2):
        raise ConfigurationError(f"{path}: expected 1025 rows of 2 columns, got {data.shape}")
    if np.max(np.abs(data[:, 0] - np.linspace(0.0, 1.0, 1025))) > 1e-9:
        raise ConfigurationError(f"{path}: column 'a' must be uniform on [0, 1]")
    digest = hashlib.sha256(data.tobytes()).hexdigest()[:16]
    return from_table(data[:, 0], data[:, 1], label=f"table:{digest}")


def parse_coefficient(spec):
    """Build a coefficient from a config string such as ``"affine:0.5,1"``."""
    if not isinstance(spec, str):
        return constant(float(spec))
    name, _, args = spec.partition(":")
    name = name.strip()
    try:
        params = [float(v) for v in args.split(",")] if args.strip() else []
    except ValueError:
        params = None
    if name == "table":
        return load_table(args.strip())
    if params is None:
        raise ConfigurationError(f"bad coefficient parameters in {spec!r}")
    if name == "constant" and len(params) <= 1:
        return constant(*params)
    if name == "linear" and not params:
        return linear()
    if name == "affine" and len(params) == 2:
        return affine(*params)
    if name == "smooth-bump" and len(params) <= 3:
        return smooth_bump(*params)
    raise ConfigurationError(f"unknown coefficient {spec!r}")


@dataclass(frozen=True)
class CoefficientPair:
    """Drift ``b`` and diffusion ``sigma`` as functions of the rank quantile."""

    b: Coefficient
    sigma: Coefficient
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        vals = self.sigma(_CHECK_POINTS)
        if self.validate and not np.all(vals > 0):
            raise EllipticityError("sigma must be strictly positive on [0, 1]")
        for name in ("b", "sigma"):
            c = getattr(self, name)
            if not (np.all(np.isfinite(c(_CHECK_POINTS))) and np.all(np.isfinite(c.prime(_CHECK_POINTS)))):
                raise ConfigurationError(f"{name} is not finite on [0, 1]")

    @classmethod
    def degenerate(cls, b, sigma):
        """Pair that skips the ellipticity check (unit-test stubs only)."""
        return cls(b, sigma, validate=False)

    @property
    def is_constant(self):
        return (self.b.label.startswith("constant") and self.sigma.label.startswith("constant"))

    def sup_b(self):
        return float(np.max(np.abs(self.b(_CHECK_POINTS))))

    def sup_sigma(self):
        return float(np.max(np.abs(self.sigma(_CHECK_POINTS))))

    def min_sigma(self):
        return float(np.min(self.sigma(_CHECK_POINTS)))

    def fingerprint(self):
        return hashlib.sha256((self.b.fingerprint() + self.sigma.fingerprint()).encode()).hexdigest()


def _cumulative_simpson(f, cells):
    nodes = np.linspace(0.0, 1.0, cells + 1)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    fn, fm = f(nodes), f(mids)
    h = 1.0 / cells
    cum = np.concatenate([[0.0], np.cumsum(h / 6.0 * (fn[:-1] + 4.0 * fm + fn[1:]))])
    return nodes, cum


class _QuadratureAntiderivative:
    """``r -> int_0^r f`` from cumulative Simpson plus a Gauss-Legendre remainder."""

    def __init__(self, f, cells):
        self.f = f
        self.cells = cells
        self.nodes, self.cum = _cumulative_simpson(f, cells)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any((r < -1e-12) | (r > 1 + 1e-12)):
            raise DomainError("antiderivative evaluated outside [0, 1]")
        r = np.clip(r, 0.0, 1.0)
        k = np.minimum((r * self.cells).astype(np.int64), self.cells - 1)
        lo = self.nodes[k]
        half = 0.5 * (r - lo)
        pts = lo[..., None] + half[..., None] * (_GL_X + 1.0)
        rem = half * np.sum(_GL_W * self.f(pts), axis=-1)
        return self.cum[k] + rem


@dataclass(frozen=True)
class AntiderivativePair:
    """``B`` and ``Sigma`` plus the upwind split ``B = B_plus + B_minus``.

    ``B_plus`` integrates ``max(b, 0)`` and ``B_minus`` integrates ``min(b, 0)``;
    ``b_sup`` and ``a_sup`` bound ``|b|`` and ``sigma^2/2`` for stability checks.
    """

    B: object
    Sigma: object
    B_plus: object
    B_minus: object
    b_sup: float
    a_sup: float
    b: object = None
    sigma: object = None


def antiderivatives(coeffs, quadrature_cells=DEFAULT_QUADRATURE_CELLS):
    """Compute ``B`` and ``Sigma`` for a coefficient pair.

    Closed forms are used when the coefficients carry them; otherwise a
    composite Simpson rule on ``quadrature_cells`` cells (absolute error far
    below 1e-10 for smooth coefficients).
    """
    if quadrature_cells < 1:
        raise ValueError("quadrature_cells must be positive")
    nodes = np.linspace(0.0, 1.0, 2 * quadrature_cells + 1)
    sig = coeffs.sigma(nodes)
    if coeffs.validate and not np.all(sig > 0):
        raise EllipticityError("non-positive sigma encountered during quadrature")
    b, s = coeffs.b, coeffs.sigma

    B = b.integral or _QuadratureAntiderivative(b.func, quadrature_cells)
    Sigma = s.half_square_integral or _QuadratureAntiderivative(
        lambda a: 0.5 * s.func(a) ** 2, quadrature_cells)

    bvals = b(nodes)
    if np.all(bvals >= 0):
        B_plus, B_minus = B, (lambda r: np.zeros(np.shape(r)))
    elif np.all(bvals <= 0):
        B_plus, B_minus = (lambda r: np.zeros(np.shape(r))), B
    else:
        B_plus = _QuadratureAntiderivative(lambda a: np.maximum(b.func(a), 0.0), quadrature_cells)

        def B_minus(r, _B=B, _Bp=B_plus):
            return _B(r) - _Bp(r)

    return AntiderivativePair(
        B=B, Sigma=Sigma, B_plus=B_plus, B_minus=B_minus,
        b_sup=float(np.max(np.abs(bvals))), a_sup=float(np.max(0.5 * sig ** 2)),
        b=b, sigma=s,
    )


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function on [0, 1] with jumps at ``k/n``."""

    values: np.ndarray

    @property
    def n(self):
        return self.values.size - 1

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        k = np.clip(np.floor(r * self.n + 1e-9).astype(np.int64), 0, self.n)
        return self.values[k]


def discretized_step_functions(coeffs, n):
    """Return the rank-discretized fluxes ``(B_n, Sigma_n)``.

    ``B_n(k/n) = (1/n) sum_{j<=k} b(j/n)`` and
    ``Sigma_n(k/n) = (1/n) sum_{j<=k} sigma(j/n)^2 / 2``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    a = np.arange(1, n + 1) / n
    Bn = np.concatenate([[0.0], np.cumsum(coeffs.b(a)) / n])
    Sn = np.concatenate([[0.0], np.cumsum(0.5 * coeffs.sigma(a) ** 2) / n])
    return StepFunction(Bn), StepFunction(Sn)
