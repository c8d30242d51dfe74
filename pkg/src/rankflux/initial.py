"""Initial laws, i.i.d. sampling and the reparametrized Brownian bridge."""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class InitialLaw:
    """A probability law on the real line with closed-form cdf and quantile."""

    name: str
    params: tuple
    density: object
    cdf: object
    quantile: object
    support: tuple
    moment_order: float = float("inf")

    def effective_support(self, tail=1e-9):
        """Interval carrying all but ``2 * tail`` of the mass."""
        lo = max(self.support[0], float(self.quantile(tail)))
        hi = min(self.support[1], float(self.quantile(1.0 - tail)))
        return lo, hi

    def moment(self, order, cells=20000):
        """Absolute moment ``E|X|^order`` by quadrature on the effective support."""
        lo, hi = self.effective_support(1e-14)
        x = np.linspace(lo, hi, cells + 1)
        return float(np.trapezoid(np.abs(x) ** order * self.density(x), x))

    def fingerprint(self):
        return hashlib.sha256(f"{self.name}{self.params!r}".encode()).hexdigest()


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("quantile evaluated outside (0, 1)")
    return u


def uniform(lo=0.0, hi=1.0):
    lo, hi = float(lo), float(hi)
    w = hi - lo
    return InitialLaw(
        "uniform", (lo, hi),
        density=lambda x: np.where((x >= lo) & (x <= hi), 1.0 / w, 0.0),
        cdf=lambda x: np.clip((np.asarray(x, dtype=float) - lo) / w, 0.0, 1.0),
        quantile=lambda u: lo + w * np.asarray(u, dtype=float),
        support=(lo, hi),
    )


def normal(mu=0.0, s=1.0):
    mu, s = float(mu), float(s)
    return InitialLaw(
        "normal", (mu, s),
        density=lambda x: np.exp(-0.5 * ((x - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi)),
        cdf=lambda x: special.ndtr((np.asarray(x, dtype=float) - mu) / s),
        quantile=lambda u: mu + s * special.ndtri(np.asarray(u, dtype=float)),
        support=(-np.inf, np.inf),
    )


def logistic(mu=0.0, s=1.0):
    mu, s = float(mu), float(s)

    def density(x):
        z = np.exp(-np.abs((x - mu) / s))
        return z / (s * (1.0 + z) ** 2)

    return InitialLaw(
        "logistic", (mu, s),
        density=density,
        cdf=lambda x: special.expit((np.asarray(x, dtype=float) - mu) / s),
        quantile=lambda u: mu + s * special.logit(np.asarray(u, dtype=float)),
        support=(-np.inf, np.inf),
    )


def truncated_normal(mu=0.0, s=1.0, lo=-2.0, hi=2.0):
    mu, s, lo, hi = float(mu), float(s), float(lo), float(hi)
    if not lo < hi:
        raise ConfigurationError("truncated_normal needs lo < hi")
    plo, phi = special.ndtr((lo - mu) / s), special.ndtr((hi - mu) / s)
    mass = phi - plo

    def density(x):
        x = np.asarray(x, dtype=float)
        d = np.exp(-0.5 * ((x - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi) * mass)
        return np.where((x >= lo) & (x <= hi), d, 0.0)

    def cdf(x):
        x = np.clip(np.asarray(x, dtype=float), lo, hi)
        return np.clip((special.ndtr((x - mu) / s) - plo) / mass, 0.0, 1.0)

    return InitialLaw(
        "truncated_normal", (mu, s, lo, hi),
        density=density, cdf=cdf,
        quantile=lambda u: mu + s * special.ndtri(plo + mass * np.asarray(u, dtype=float)),
        support=(lo, hi),
    )


_BUILTINS = {
    "uniform": uniform,
    "normal": normal,
    "logistic": logistic,
    "truncated_normal": truncated_normal,
}


def make_law(name, **params):
    """Build a built-in law from its config name and keyword parameters."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown initial law {name!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for initial law {name!r}: {exc}") from None


def sample_iid(law, n, stream):
    """Draw ``n`` i.i.d. positions by the quantile transform.

    ``stream`` is a ``numpy.random.Generator``; the result is deterministic
    given its state.  A leading batch shape may be requested by passing a
    tuple for ``n``.
    """
    shape = (n,) if np.isscalar(n) else tuple(n)
    if any(k < 1 for k in shape):
        raise ValueError("sample size must be positive")
    u = stream.random(shape)
    # random() is on [0, 1); 0 is mapped to the smallest positive double
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return law.quantile(_check_u(u))


@dataclass(frozen=True)
class BridgePath:
    """Realization of ``beta(F(x))`` on a sorted grid (``values`` may be batched)."""

    grid: np.ndarray
    values: np.ndarray


def sample_bridge(law, grid, stream, size=None):
    """Exact draw of a standard Brownian bridge at the points ``F(grid)``.

    Sequential Gaussian conditionals in increasing ``F`` order; the bridge is
    pinned at 0 where ``F`` is 0 or 1 and repeats its value wherever ``F``
    is flat.  ``size`` adds a leading batch axis of independent draws.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    u = np.clip(law.cdf(grid), 0.0, 1.0)
    u = np.maximum.accumulate(u)
    batch = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    z = stream.standard_normal(batch + grid.shape)
    out = np.zeros(batch + grid.shape)
    prev_u, prev_v = 0.0, np.zeros(batch)
    for k, uk in enumerate(u):
        if prev_u >= 1.0 or uk >= 1.0:
            v = np.zeros(batch)
        elif uk == prev_u:
            v = prev_v
        else:
            ratio = (1.0 - uk) / (1.0 - prev_u)
            var = (uk - prev_u) * ratio
            v = prev_v * ratio + np.sqrt(var) * z[..., k]
        out[..., k] = v
        prev_u, prev_v = uk, v
    return BridgePath(grid=grid, values=out)
