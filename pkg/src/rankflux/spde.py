"""Mild solution of the linear fluctuation SPDE and its exact covariance.

A realization on the field grid ``t_k = k ds``, ``x_l`` (spacing ``dy``) is

    G(t_k, x_l) = sum_j beta(F(y_j)) p(0, y_j; t_k, x_l) dy
                + sum_{m < k} sum_j sigma(R) R_x^{1/2}(s_m, y_j) p(s_m, y_j; t_k, x_l) xi_{m,j} sqrt(ds dy)

with one standard Gaussian ``xi`` per noise cell ``[m ds, (m+1) ds] x [x_j, x_j + dy]``
shared by every target; ``(s_m, y_j)`` is the cell centre.  The bridge term
uses the field nodes themselves.  The cell ending at
``t_k`` carries the integrable ``(t-s)^{-1/2}`` singularity; it uses the
locally-frozen Gaussian kernel at the lag ``ds/4``, which reproduces the
cell's exact contribution to the variance for frozen coefficients.  Other
cells whose lag falls below the kernel's reliable window also use the frozen
Gaussian, at the midpoint lag.

The exact covariance is assembled independently from backward (adjoint)
Kolmogorov solves on the fine grid of ``R``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import io
from .errors import CacheError, DomainError, PreconditionError
from .kernel import (RELIABLE_FACTOR, KernelFamily, _coeff_rows, adjoint_step, check_cfl,
                     gaussian_kernel, kernel_family, lag_steps, local_coefficients)

_GL_U, _GL_UW = np.polynomial.legendre.leggauss(24)


@dataclass
class FluctuationField:
    """Field realizations; ``values`` has shape ``batch + (len(t_grid), len(x_grid))``."""

    t_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    initial_part: np.ndarray
    noise_part: np.ndarray

    def to_csv(self, path, prov=None, realization=0):
        G = self.values.reshape((-1,) + self.values.shape[-2:])[realization]
        I = self.initial_part.reshape((-1,) + G.shape)[realization]
        N = self.noise_part.reshape((-1,) + G.shape)[realization]
        rows = ((self.t_grid[k], self.x_grid[l], G[k, l], I[k, l], N[k, l])
                for k in range(self.t_grid.size) for l in range(self.x_grid.size))
        io.write_csv(path, ["t", "x", "G", "initial_part", "noise_part"], rows, prov)


@dataclass
class MildKernels:
    """Kernel families needed by one field discretization.

    ``initial`` holds kernels from ``(0, x_j)``; ``noise`` from the noise
    cell centres ``(s_m, y_j)``.  Both are read at the field times on the
    field nodes ``x``.
    """

    t: np.ndarray
    x: np.ndarray
    ds: float
    dy: float
    initial: KernelFamily
    noise: KernelFamily
    reliable_lag: float
    meta: dict = field(default_factory=dict)

    @property
    def s_mid(self):
        return self.noise.s

    @property
    def y(self):
        return self.noise.y

    def save(self, prefix):
        self.initial.save(f"{prefix}.initial.bin")
        self.noise.save(f"{prefix}.noise.bin")

    @classmethod
    def load(cls, prefix, ds, dy, reliable_lag):
        ini = KernelFamily.load(f"{prefix}.initial.bin")
        noi = KernelFamily.load(f"{prefix}.noise.bin")
        return cls(ini.t, ini.x, ds, dy, ini, noi, reliable_lag)


def field_nodes(R, window, dy):
    """Field nodes: grid nodes of ``R`` spaced ``dy`` covering ``window``."""
    stride = dy / R.dx
    if abs(stride - round(stride)) > 1e-6 or round(stride) < 1:
        raise PreconditionError("dy must be a positive multiple of the grid spacing")
    lo, hi = window
    if lo <= R.x[0] or hi >= R.x[-1]:
        raise DomainError("field window must lie strictly inside the spatial grid")
    j0 = int(np.ceil((lo - R.x[0]) / R.dx - 1e-9))
    j1 = int(np.floor((hi - R.x[0]) / R.dx + 1e-9))
    return R.x[j0:j1 + 1:int(round(stride))].copy()


def mild_kernels(R, coeffs, T, ds, dy, window, mollifier_width=None):
    """Compute the kernel families for the field grid ``[0, T] x window``."""
    K = int(round(T / ds))
    if K < 1 or abs(K * ds - T) > 1e-9:
        raise PreconditionError("ds must divide T")
    for tt in np.arange(K + 1) * ds:
        R.time_index(tt)
    for tt in (np.arange(K) + 0.5) * ds:
        R.time_index(tt)
    t = np.arange(K + 1) * ds
    x = field_nodes(R, window, dy)
    w = max(2.0 * R.dx, mollifier_width or 0.0)
    ini = kernel_family(R, coeffs, [0.0], x, t, x, w)
    noi = kernel_family(R, coeffs, (np.arange(K) + 0.5) * ds, 0.5 * (x[1:] + x[:-1]), t, x, w)
    rel = RELIABLE_FACTOR * w ** 2 / coeffs.min_sigma() ** 2
    return MildKernels(t, x, ds, dy, ini, noi, rel)


def singular_lag(j, ds):
    """Frozen-Gaussian lag matching ``int (t-s)^{-1/2}`` over the ``j``-th cell before ``t``."""
    return ds / (4.0 * (np.sqrt(j + 1.0) - np.sqrt(j)) ** 2)


def noise_weights(R, coeffs, kernels):
    """``sigma(R) R_x^{1/2} sqrt(ds dy)`` at every noise cell centre, shape ``(K, ny)``."""
    out = np.empty((kernels.s_mid.size, kernels.y.size))
    for m, s in enumerate(kernels.s_mid):
        r = R.evaluate(s, kernels.y)
        rx = np.maximum(R.evaluate_gradient(s, kernels.y), 0.0)
        out[m] = coeffs.sigma(r) * np.sqrt(rx)
    return out * np.sqrt(kernels.ds * kernels.dy)


def noise_operator(R, coeffs, kernels):
    """Dense map from the noise array ``xi`` (K, ny) to the field (K+1, nx)."""
    K, x, y = kernels.s_mid.size, kernels.x, kernels.y
    wts = noise_weights(R, coeffs, kernels)
    A = np.zeros((K + 1, x.size, K, y.size))
    for m in range(K):
        s = kernels.s_mid[m]
        b0, s0 = local_coefficients(R, coeffs, s, y)
        for k in range(m + 1, K + 1):
            lag = kernels.t[k] - s
            if k == m + 1:
                P = gaussian_kernel(x[:, None], y[None, :], singular_lag(0, kernels.ds), b0, s0)
            elif lag < kernels.reliable_lag or np.isnan(kernels.noise.values[m, :, k]).any():
                P = gaussian_kernel(x[:, None], y[None, :], lag, b0, s0)
            else:
                P = kernels.noise.values[m, :, k, :].T
            A[k, :, m, :] = P * wts[m][None, :]
    return A


def initial_operator(R, coeffs, kernels):
    """Dense map from bridge values on the field nodes to the field (K+1, nx)."""
    x = kernels.x
    Bop = np.zeros((kernels.t.size, x.size, x.size))
    Bop[0] = np.eye(x.size)
    b0, s0 = local_coefficients(R, coeffs, 0.0, x)
    for k in range(1, kernels.t.size):
        lag = kernels.t[k]
        vals = kernels.initial.values[0, :, k, :]
        if lag < kernels.reliable_lag or np.isnan(vals).any():
            P = gaussian_kernel(x[:, None], x[None, :], lag, b0, s0)
        else:
            P = vals.T
        Bop[k] = P * kernels.dy
    return Bop


def draw_noise(stream, kernels, size=None):
    batch = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    return stream.standard_normal(batch + (kernels.s_mid.size, kernels.y.size))


def simulate_mild(R, coeffs, kernels, bridge, stream=None, noise=None, operators=None):
    """Assemble realizations of the mild solution.

    ``bridge`` is a :class:`~rankflux.initial.BridgePath` on the field nodes
    (its values may be batched).  The noise array is drawn from ``stream``
    with the bridge's batch shape unless supplied.  Returns the field; the
    noise used is available as ``field.noise_draws``.
    """
    if bridge.grid.shape != kernels.x.shape or np.max(np.abs(bridge.grid - kernels.x)) > 1e-12:
        raise PreconditionError("bridge must be sampled on the field nodes")
    if kernels.noise.values.shape[0] != kernels.s_mid.size:
        raise CacheError("kernel cache does not cover the noise cells")
    beta = np.asarray(bridge.values, dtype=float)
    batch = beta.shape[:-1]
    if noise is None:
        if stream is None:
            raise PreconditionError("need a stream or an explicit noise array")
        noise = draw_noise(stream, kernels, batch)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != batch + (kernels.s_mid.size, kernels.y.size):
        raise PreconditionError("noise array has the wrong shape")
    A, Bop = operators if operators is not None else (noise_operator(R, coeffs, kernels),
                                                       initial_operator(R, coeffs, kernels))
    K1, nx = A.shape[:2]
    ini = (beta.reshape(-1, beta.shape[-1]) @ Bop.reshape(K1 * nx, -1).T).reshape(batch + (K1, nx))
    noi = (noise.reshape(-1, A.shape[2] * A.shape[3]) @ A.reshape(K1 * nx, -1).T).reshape(batch + (K1, nx))
    f = FluctuationField(kernels.t.copy(), kernels.x.copy(), ini + noi, ini, noi)
    f.noise_draws = noise
    return f


def discrete_covariance(R, coeffs, kernels, law, operators=None):
    """Exact covariance of the *discretized* field, shape ``(K+1, nx, K+1, nx)``."""
    A, Bop = operators if operators is not None else (noise_operator(R, coeffs, kernels),
                                                       initial_operator(R, coeffs, kernels))
    K1, nx = A.shape[:2]
    Am = A.reshape(K1 * nx, -1)
    u = np.clip(law.cdf(kernels.x), 0.0, 1.0)
    C = np.minimum.outer(u, u) - np.outer(u, u)
    Bm = Bop.reshape(K1 * nx, -1)
    return (Am @ Am.T + Bm @ C @ Bm.T).reshape(K1, nx, K1, nx)


# exact covariance via backward solves --------------------------------------

@dataclass
class BackwardKernel:
    """``q[k, j] = p(s_k, y_j; t, x)`` for grid times ``s_k <= t - lag``."""

    t: float
    x: float
    k_end: int
    q: np.ndarray
    lag: float
    b: float
    sigma: float


def backward_kernel(R, coeffs, t, x, mollifier_width=None):
    """Backward Kolmogorov solve for the target ``(t, x)`` on the grid of ``R``."""
    kt = R.time_index(t)
    w = max(2.0 * R.dx, mollifier_width or 0.0)
    b0, s0 = (float(v) for v in local_coefficients(R, coeffs, t, x))
    kw = lag_steps(w, s0, R.dt)
    k_end = kt - kw
    q = np.zeros((max(k_end, -1) + 1, R.x.size))
    if k_end < 0:
        return BackwardKernel(t, x, k_end, q, kw * R.dt, b0, s0)
    check_cfl(R, coeffs)
    lam, mu = R.dt / R.dx, R.dt / R.dx ** 2
    cur = gaussian_kernel(x, R.x, kw * R.dt, b0, s0)
    cur[0] = cur[-1] = 0.0
    q[k_end] = cur
    for k in range(k_end - 1, -1, -1):
        cur = adjoint_step(cur, *_coeff_rows(R, coeffs, k), lam, mu)
        q[k] = cur
    return BackwardKernel(t, x, k_end, q, kw * R.dt, b0, s0)


def _intensity(R, coeffs, s, y):
    r = R.evaluate(s, y)
    return coeffs.sigma(r) ** 2 * np.maximum(R.evaluate_gradient(s, y), 0.0)


def _bridge_cov(law, y1, y2):
    u1 = np.clip(law.cdf(y1), 0.0, 1.0)
    u2 = np.clip(law.cdf(y2), 0.0, 1.0)
    return np.minimum.outer(u1, u2) - np.outer(u1, u2)


def _kernel_at(R, coeffs, bk, s, y, reliable):
    """``p(s, y; t, x)`` from a backward kernel, frozen Gaussian for short lags."""
    lag = bk.t - s
    if lag <= 0:
        raise PreconditionError("kernel needs s < t")
    k = R.time_index(s)
    if lag < reliable or k > bk.k_end:
        return gaussian_kernel(bk.x, y, lag, bk.b, bk.sigma)
    return np.interp(y, R.x, bk.q[k])


def covariance_exact(t1, x1, t2, x2, R, coeffs, law, mollifier_width=None, y_points=401):
    """Covariance of the limit field between ``(t1, x1)`` and ``(t2, x2)``.

    Bridge term by a double sum on the grid of ``R``; noise term by the
    trapezoid rule on grid times where both kernels are resolved and, over
    the last short window before ``min(t1, t2)``, by Gauss-Legendre in
    ``u = sqrt(tmin - s)`` with frozen Gaussian kernels and trapezoid
    quadrature in ``y`` on a window fitted to the kernel widths.
    """
    (t1, x1), (t2, x2) = sorted([(float(t1), float(x1)), (float(t2), float(x2))])
    w = max(2.0 * R.dx, mollifier_width or 0.0)
    reliable = RELIABLE_FACTOR * w ** 2 / coeffs.min_sigma() ** 2
    bks = [backward_kernel(R, coeffs, tt, xx, w) if tt > 0 else None for tt, xx in ((t1, x1), (t2, x2))]

    # bridge term
    def at_zero(bk, tt, xx):
        if tt == 0:
            return None
        if tt < reliable or bk.k_end < 0:
            b0, s0 = local_coefficients(R, coeffs, 0.0, R.x)
            return gaussian_kernel(xx, R.x, tt, b0, s0)
        return bk.q[0]

    q1, q2 = at_zero(bks[0], t1, x1), at_zero(bks[1], t2, x2)
    if q1 is None and q2 is None:
        bridge = float(_bridge_cov(law, np.array([x1]), np.array([x2]))[0, 0])
    elif q1 is None:
        bridge = float(_bridge_cov(law, np.array([x1]), R.x)[0] @ q2 * R.dx)
    else:
        S = _bridge_cov(law, R.x, R.x)
        bridge = float(q1 @ S @ q2 * R.dx ** 2)

    tmin = t1
    if tmin == 0:
        return bridge
    # noise term: regular part on grid times
    k_split = R.time_index(tmin)
    split_steps = int(np.ceil(reliable / R.dt - 1e-9))
    k_split = max(0, k_split - split_steps)
    s_split = R.t[k_split]
    vals = np.zeros(k_split + 1)
    for k in range(k_split + 1):
        s = R.t[k]
        p1 = _kernel_at(R, coeffs, bks[0], s, R.x, reliable)
        p2 = _kernel_at(R, coeffs, bks[1], s, R.x, reliable)
        vals[k] = np.sum(_intensity(R, coeffs, s, R.x) * p1 * p2) * R.dx
    regular = float(np.trapezoid(vals, R.t[:k_split + 1])) if k_split > 0 else 0.0

    # singular part: s = tmin - u^2
    umax = np.sqrt(tmin - s_split)
    us = 0.5 * umax * (_GL_U + 1.0)
    uw = 0.5 * umax * _GL_UW
    sing = 0.0
    for u, wu in zip(us, uw):
        s = tmin - u * u
        lag1 = t1 - s
        b1, s1 = (float(v) for v in local_coefficients(R, coeffs, s, x1))
        centre, sd = x1 - b1 * lag1, s1 * np.sqrt(lag1)
        y = centre + sd * np.linspace(-12.0, 12.0, y_points)
        b_y, sig_y = local_coefficients(R, coeffs, s, y)
        p1 = gaussian_kernel(x1, y, lag1, b_y, sig_y)
        if t2 - s < reliable or bks[1].k_end < 0 or s > R.t[bks[1].k_end]:
            b_y2, sig_y2 = local_coefficients(R, coeffs, s, y)
            p2 = gaussian_kernel(x2, y, t2 - s, b_y2, sig_y2)
        else:
            p2 = _interp_time_row(R, bks[1], s, y)
        f = _intensity(R, coeffs, s, y) * p1 * p2
        sing += wu * 2.0 * u * float(np.trapezoid(f, y))
    return bridge + regular + sing


def _interp_time_row(R, bk, s, y):
    pos = s / R.dt
    k0 = min(int(np.floor(pos)), bk.k_end)
    k1 = min(k0 + 1, bk.k_end)
    w = min(max(pos - k0, 0.0), 1.0)
    row = (1 - w) * bk.q[k0] + w * bk.q[k1]
    return np.interp(y, R.x, row)


def covariance_table(points, R, coeffs, law, mollifier_width=None):
    """Symmetric matrix of :func:`covariance_exact` over probe points ``[(t, x), ...]``."""
    n = len(points)
    C = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            C[i, j] = C[j, i] = covariance_exact(*points[i], *points[j], R, coeffs, law, mollifier_width)
    return C


def write_covariance_csv(path, points, C, prov=None):
    rows = ((points[i][0], points[i][1], points[j][0], points[j][1], C[i, j])
            for i in range(len(points)) for j in range(len(points)))
    io.write_csv(path, ["t1", "x1", "t2", "x2", "cov"], rows, prov)


def observable_covariance(R, coeffs, law, observables):
    """Limit covariance matrix of linear observables of the field.

    Each observable is ``(kind, gamma, t)`` with ``gamma(s, x)``; kind ``"G"``
    is ``int gamma(t, x) G(t, x) dx`` and kind ``"H"`` is
    ``int_0^t int gamma(s, x) G(s, x) dx ds``.  For each one the weight
    ``phi(s, y)`` (the expected observable seen from a unit fluctuation at
    ``(s, y)``) solves the backward equation, with terminal value ``gamma``
    for ``"G"`` and with ``gamma`` as a running source for ``"H"``.  Then

        Cov = <phi_i(0), C_bridge phi_j(0)> + int int sigma(R)^2 R_x phi_i phi_j dy ds.
    """
    check_cfl(R, coeffs)
    lam, mu = R.dt / R.dx, R.dt / R.dx ** 2
    m = len(observables)
    ends = [R.time_index(t) for _, _, t in observables]
    kmax = max(ends)
    cur = np.zeros((R.x.size, m))
    acc = np.zeros((kmax + 1, m, m))
    for k in range(kmax, -1, -1):
        if k < kmax:
            cur = adjoint_step(cur, *_coeff_rows(R, coeffs, k), lam, mu)
        phi = cur.copy()
        for i, (kind, gamma, _) in enumerate(observables):
            if k > ends[i]:
                continue
            g = np.asarray(gamma(R.t[k], R.x), dtype=float) * np.ones(R.x.size)
            g[0] = g[-1] = 0.0
            if kind == "G":
                if k == ends[i]:
                    cur[:, i] = g
                    phi[:, i] = g
            elif kind == "H":
                # running trapezoid: cur carries full interior weights, phi halves the lower endpoint
                wk = 0.5 * R.dt if k == ends[i] else R.dt
                cur[:, i] += wk * g
                phi[:, i] = 0.0 if k == ends[i] else cur[:, i] - 0.5 * R.dt * g
            else:
                raise PreconditionError(f"unknown observable kind {kind!r}")
        intensity = coeffs.sigma(R.R[k]) ** 2 * R.Rx[k]
        acc[k] = (phi * intensity[:, None]).T @ phi * R.dx
        if k == 0:
            phi0 = phi
    noise = np.trapezoid(acc, R.t[:kmax + 1], axis=0) if kmax > 0 else np.zeros((m, m))
    S = _bridge_cov(law, R.x, R.x)
    bridge = phi0.T @ S @ phi0 * R.dx ** 2
    return bridge + noise


def observable_variance(R, coeffs, law, gamma, t, kind="G"):
    """Limit variance of one observable; see :func:`observable_covariance`."""
    return float(observable_covariance(R, coeffs, law, [(kind, gamma, t)])[0, 0])


# mild identity ---------------------------------------------------------------

def generator_integrand(gamma, R, coeffs, t, x):
    """``gamma_s + b(R) gamma_x + sigma(R)^2/2 gamma_xx`` at time ``t``."""
    r = R.evaluate(t, x)
    return gamma.f_t(t, x) + coeffs.b(r) * gamma.f_x(t, x) + 0.5 * coeffs.sigma(r) ** 2 * gamma.f_xx(t, x)


def mild_identity_residual(field, gamma, R, coeffs, noise_draws, ds=None, dy=None):
    """``|LHS - RHS|`` of the test-function identity for each realization.

    LHS ``= (gamma, G)(T) - (gamma, G)(0) - int_0^T (A gamma, G) ds`` with
    Riemann sums on the field nodes and the trapezoid rule in time; RHS is
    the discrete stochastic integral of ``gamma sigma(R) R_x^{1/2}`` against
    the same noise cells that built the field.
    """
    t, x = field.t_grid, field.x_grid
    ds = ds if ds is not None else float(t[1] - t[0])
    dy = dy if dy is not None else float(x[1] - x[0])
    lo, hi = gamma.support
    if lo < x[0] - 1e-12 or hi > x[-1] + 1e-12:
        raise PreconditionError("test function support exceeds the field grid")
    G = field.values
    pair = lambda k, f: np.sum(f[None, :] * G[..., k, :].reshape(-1, x.size), axis=-1) * dy
    lhs = pair(-1, gamma.f(t[-1], x)) - pair(0, gamma.f(t[0], x))
    gen = np.array([pair(k, generator_integrand(gamma, R, coeffs, t[k], x)) for k in range(t.size)])
    lhs = lhs - np.trapezoid(gen, t, axis=0)
    s_mid = (np.arange(t.size - 1) + 0.5) * ds
    y = 0.5 * (x[1:] + x[:-1])
    wts = np.empty((s_mid.size, y.size))
    for m, s in enumerate(s_mid):
        r = R.evaluate(s, y)
        wts[m] = gamma.f(s, y) * coeffs.sigma(r) * np.sqrt(np.maximum(R.evaluate_gradient(s, y), 0.0))
    xi = np.asarray(noise_draws, dtype=float).reshape(-1, s_mid.size * y.size)
    rhs = xi @ wts.reshape(-1) * np.sqrt(ds * dy)
    res = np.abs(lhs - rhs)
    return float(res[0]) if G.ndim == 2 else res.reshape(G.shape[:-2])


def coarsen_noise(fine):
    """Coarse-cell noise from noise on cells refined 2x in time and space.

    Coarse cell ``(m, j)`` is the union of fine cells ``(2m + a, 2j + c)``,
    ``a, c in {0, 1}``; preserving the white-noise mass of the union gives
    ``xi_coarse = (sum of the four fine draws) / 2``.
    """
    f = np.asarray(fine, dtype=float)
    K2, n2 = f.shape[-2:]
    if K2 % 2 or n2 % 2:
        raise PreconditionError("fine noise needs an even number of cells on both axes")
    blocks = f.reshape(f.shape[:-2] + (K2 // 2, 2, n2 // 2, 2))
    return blocks.sum(axis=(-3, -1)) / 2.0
