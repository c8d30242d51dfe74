"""One-dimensional Wasserstein distances.

``W_1`` is computed as the L1 distance of CDFs, ``W_p`` as the L^p distance of
quantile functions.  Empirical and gridded measures have piecewise-linear
CDFs and quantiles, so distances between them are integrated exactly over
merged breakpoints.  Analytic laws fall back to panel Gauss-Legendre.
"""

from dataclasses import dataclass

import numpy as np

from . import io
from .errors import DomainError, MomentError, PreconditionError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)
_GL8_NODES, _GL8_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class _Pieces:
    """Piecewise-linear function on ``[breaks[0], breaks[-1]]``.

    On interval ``i`` it runs linearly from ``left[i]`` (value just right of
    ``breaks[i]``) to ``right[i]`` (value just left of ``breaks[i + 1]``);
    outside the range it equals ``below`` / ``above``.
    """

    breaks: np.ndarray
    left: np.ndarray
    right: np.ndarray
    below: float
    above: float

    def at(self, pts, side):
        """Value just right (``side='+'``) or just left (``'-'``) of each point."""
        b = self.breaks
        pts = np.asarray(pts, dtype=float)
        if side == "+":
            i = np.searchsorted(b, pts, side="right") - 1
        else:
            i = np.searchsorted(b, pts, side="left") - 1
        inside = (i >= 0) & (i < b.size - 1)
        ic = np.clip(i, 0, b.size - 2)
        span = b[ic + 1] - b[ic]
        w = np.where(span > 0, (pts - b[ic]) / np.where(span > 0, span, 1.0), 0.0)
        v = self.left[ic] + w * (self.right[ic] - self.left[ic])
        out = np.where(i < 0, self.below, self.above)
        return np.where(inside, v, out)


@dataclass(frozen=True)
class Measure1D:
    """Probability measure on the line.

    ``kind`` is ``"empirical"`` (``sample`` sorted ascending, equal weights),
    ``"gridded"`` (``cdf`` values on ``x_grid``, linear in between, 0 below
    and 1 above the grid) or ``"analytic"`` (``cdf``/``quantile`` callables).
    ``p_max`` is the highest finite absolute moment.
    """

    kind: str
    sample: np.ndarray = None
    x_grid: np.ndarray = None
    cdf: object = None
    quantile: object = None
    support: tuple = (-np.inf, np.inf)
    p_max: float = np.inf

    def __post_init__(self):
        if self.kind == "empirical":
            s = np.asarray(self.sample, dtype=float)
            if s.ndim != 1 or s.size == 0 or np.any(np.diff(s) < 0):
                raise PreconditionError("empirical sample must be a non-empty ascending vector")
            object.__setattr__(self, "sample", s)
        elif self.kind == "gridded":
            x = np.asarray(self.x_grid, dtype=float)
            F = np.asarray(self.cdf, dtype=float)
            if x.shape != F.shape or x.size < 2 or np.any(np.diff(x) <= 0):
                raise PreconditionError("gridded measure needs matching strictly increasing grid")
            if np.any(np.diff(F) < 0) or F[0] < 0 or F[-1] > 1:
                raise PreconditionError("gridded CDF must be nondecreasing in [0, 1]")
            object.__setattr__(self, "x_grid", x)
            object.__setattr__(self, "cdf", F)
        elif self.kind != "analytic":
            raise ValueError(f"unknown measure kind {self.kind!r}")

    # constructors
    @classmethod
    def empirical(cls, sample):
        return cls("empirical", sample=np.sort(np.asarray(sample, dtype=float)))

    @classmethod
    def gridded(cls, x_grid, cdf_values):
        return cls("gridded", x_grid=x_grid, cdf=cdf_values)

    @classmethod
    def from_law(cls, law):
        return cls("analytic", cdf=law.cdf, quantile=law.quantile, support=law.support,
                   p_max=law.moment_order)

    @classmethod
    def dirac(cls, a):
        return cls.empirical([a])

    # piecewise structure
    def cdf_pieces(self):
        if self.kind == "empirical":
            xs, counts = np.unique(self.sample, return_counts=True)
            F = np.cumsum(counts) / self.sample.size
            if xs.size == 1:
                return _Pieces(np.array([xs[0], xs[0]]), np.ones(1), np.ones(1), 0.0, 1.0)
            return _Pieces(xs, F[:-1], F[:-1], 0.0, 1.0)
        if self.kind == "gridded":
            return _Pieces(self.x_grid, self.cdf[:-1], self.cdf[1:], 0.0, 1.0)
        raise TypeError("analytic measures have no finite piecewise structure")

    def quantile_pieces(self):
        if self.kind == "empirical":
            n = self.sample.size
            a = np.arange(n + 1) / n
            return _Pieces(a, self.sample, self.sample, self.sample[0], self.sample[-1])
        if self.kind == "gridded":
            x, F = self.x_grid, self.cdf
            a, lv, rv = [0.0], [], []
            if F[0] > 0:
                a.append(F[0]); lv.append(x[0]); rv.append(x[0])
            for j in range(x.size - 1):
                if F[j + 1] > F[j]:
                    a.append(F[j + 1]); lv.append(x[j]); rv.append(x[j + 1])
            if F[-1] < 1:
                a.append(1.0); lv.append(x[-1]); rv.append(x[-1])
            return _Pieces(np.array(a), np.array(lv), np.array(rv), x[0], x[-1])
        raise TypeError("analytic measures have no finite piecewise structure")

    def cdf_at(self, x):
        if self.kind == "analytic":
            return np.asarray(self.cdf(x), dtype=float)
        return self.cdf_pieces().at(x, "+")

    def quantile_at(self, a):
        if self.kind == "analytic":
            a = np.clip(np.asarray(a, dtype=float), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
            return np.asarray(self.quantile(a), dtype=float)
        return self.quantile_pieces().at(a, "-")

    def effective_range(self, tail=1e-12):
        if self.kind == "empirical":
            return float(self.sample[0]), float(self.sample[-1])
        if self.kind == "gridded":
            return float(self.x_grid[0]), float(self.x_grid[-1])
        lo = max(self.support[0], float(self.quantile(tail)))
        hi = min(self.support[1], float(self.quantile(1.0 - tail)))
        return lo, hi


def _antider_abs_pow(u, p):
    return np.sign(u) * np.abs(u) ** (p + 1.0) / (p + 1.0)


def _linear_abs_pow(d0, d1, p):
    """``int_0^1 |d0 + (d1 - d0) s|^p ds`` elementwise."""
    d0 = np.asarray(d0, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    cross = (d0 * d1) < 0
    # opposite signs: exact antiderivative, no cancellation
    denom = np.where(cross, d1 - d0, 1.0)
    exact = (_antider_abs_pow(d1, p) - _antider_abs_pow(d0, p)) / denom
    s = 0.5 * (_GL8_NODES + 1.0)
    vals = np.abs(d0[..., None] + (d1 - d0)[..., None] * s) ** p
    gl = vals @ (0.5 * _GL8_WEIGHTS)
    const = np.abs(d0) ** p
    return np.where(cross, exact, np.where(d0 == d1, const, gl))


def _merged_integral(f, g, p):
    breaks = np.union1d(f.breaks, g.breaks)
    if breaks.size < 2:
        return 0.0
    lo, hi = breaks[:-1], breaks[1:]
    d0 = f.at(lo, "+") - g.at(lo, "+")
    d1 = f.at(hi, "-") - g.at(hi, "-")
    return float(np.sum((hi - lo) * _linear_abs_pow(d0, d1, p)))


def _split_at_crossings(diff, edges, iters=60):
    """Add the sign change of ``diff`` inside each panel (by bisection) as an edge."""
    lo, hi = edges[:-1].copy(), edges[1:].copy()
    f_lo = diff(lo)
    change = f_lo * diff(hi) < 0
    a, b, fa = lo[change], hi[change], f_lo[change]
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = diff(m)
        left = fa * fm <= 0
        b = np.where(left, m, b)
        a = np.where(left, a, m)
        fa = np.where(left, fa, fm)
    return np.union1d(edges, 0.5 * (a + b))


def _panel_quadrature(func, edges, diff=None):
    """Panel Gauss-Legendre of ``func``; ``diff`` marks kinks of ``|diff|`` to split at."""
    edges = np.unique(np.asarray(edges, dtype=float))
    if diff is not None:
        edges = _split_at_crossings(diff, edges)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _GL_NODES
    return float(np.sum(half * (func(pts) @ _GL_WEIGHTS)))


def _guard(mu, nu, p):
    if mu.p_max < p or nu.p_max < p:
        raise MomentError(f"W_{p} needs finite moments of order {p}")


def _check(value):
    if not np.isfinite(value):
        raise MomentError("Wasserstein integral did not converge (tails do not decay)")
    return max(value, 0.0)


def w1_cdf(mu, nu):
    """``int |F_mu - F_nu| dx``."""
    _guard(mu, nu, 1.0)
    if mu.kind != "analytic" and nu.kind != "analytic":
        return _check(_merged_integral(mu.cdf_pieces(), nu.cdf_pieces(), 1.0))
    lo = min(mu.effective_range()[0], nu.effective_range()[0])
    hi = max(mu.effective_range()[1], nu.effective_range()[1])
    edges = [np.linspace(lo, hi, 1025)]
    for m in (mu, nu):
        if m.kind != "analytic":
            edges.append(m.cdf_pieces().breaks)
    diff = lambda x: mu.cdf_at(x) - nu.cdf_at(x)
    val = _panel_quadrature(lambda x: np.abs(diff(x)), np.concatenate(edges), diff)
    return _check(val)


def _a_edges():
    # graded panels towards both ends; the outer 1e-14 of mass on each side is dropped
    dec = 10.0 ** -np.arange(1, 15)
    return np.concatenate([dec[::-1], np.linspace(0.1, 0.9, 513), 1.0 - dec])


def wp_quantile(mu, nu, p):
    """``(int_0^1 |q_mu - q_nu|^p da)^(1/p)``."""
    p = float(p)
    if not p >= 1.0:
        raise DomainError(f"p must be >= 1, got {p}")
    _guard(mu, nu, p)
    if mu.kind != "analytic" and nu.kind != "analytic":
        val = _merged_integral(mu.quantile_pieces(), nu.quantile_pieces(), p)
    else:
        edges = [_a_edges()]
        for m in (mu, nu):
            if m.kind != "analytic":
                edges.append(m.quantile_pieces().breaks)
        diff = lambda a: mu.quantile_at(a) - nu.quantile_at(a)
        val = _panel_quadrature(lambda a: np.abs(diff(a)) ** p, np.concatenate(edges), diff)
    return _check(val) ** (1.0 / p)


def sorted_difference_wp(x, y, p):
    """``W_p^p`` between equal-size empirical measures along the last axis (batched)."""
    xs = np.sort(np.asarray(x, dtype=float), axis=-1)
    ys = np.sort(np.asarray(y, dtype=float), axis=-1)
    return np.mean(np.abs(xs - ys) ** p, axis=-1)


def wpp_uniform(samples, p):
    """``W_p^p`` between empirical measures of sorted samples and the uniform law.

    Vectorized along leading axes; each quantile piece is integrated exactly.
    """
    xs = np.sort(np.asarray(samples, dtype=float), axis=-1)
    n = xs.shape[-1]
    a = np.arange(n + 1) / n
    # on ((k-1)/n, k/n] the difference q_emp - q_unif runs from x_k - a_{k-1} to x_k - a_k
    return np.mean(_linear_abs_pow(xs - a[:-1], xs - a[1:], p), axis=-1)


@dataclass
class RateTable:
    n: np.ndarray
    p: float
    estimate: np.ndarray
    stderr: np.ndarray
    slope: float
    replications: int

    def to_csv(self, path, prov=None):
        rows = [(int(n), self.p, e, s, self.slope) for n, e, s in zip(self.n, self.estimate, self.stderr)]
        io.write_csv(path, ["n", "p", "estimate", "stderr", "slope"], rows, prov)


def loglog_slope(n, values):
    return float(np.polyfit(np.log(np.asarray(n, float)), np.log(np.asarray(values, float)), 1)[0])


def uniform_rate_experiment(p, n_list, replications, stream, batch=50):
    """Estimate ``E[W_p^p]^{1/p}`` for empirical measures of ``n`` uniforms.

    Returns a :class:`RateTable` with delta-method standard errors and the
    least-squares log-log slope against ``n``.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise PreconditionError("n_list must be strictly ascending")
    est, se = [], []
    for n in n_list:
        vals = []
        for start in range(0, replications, batch):
            k = min(batch, replications - start)
            vals.append(wpp_uniform(stream.random((k, n)), p))
        v = np.concatenate(vals)
        m = float(np.mean(v))
        s = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        est.append(m ** (1.0 / p))
        se.append(s * m ** (1.0 / p - 1.0) / p)
    est = np.array(est)
    return RateTable(np.array(n_list), float(p), est, np.array(se), loglog_slope(n_list, est), replications)
