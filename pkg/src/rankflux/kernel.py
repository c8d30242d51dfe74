"""Transition density of the limit diffusion ``dX = b(R(t,X))dt + sigma(R(t,X))dB``.

The density is propagated by an explicit conservative Fokker-Planck scheme on
the space-time grid of ``R``: centred second differences of ``a p`` with
``a = sigma(R)^2 / 2`` and centred (or, at large cell Peclet number, upwind)
fluxes of ``b p``.  Under the same stability bound as the porous-medium
solver every step is a positive, mass-conserving map (up to absorption at
the two edge nodes).

A point source cannot be represented on a grid, so a slice starts from a
Gaussian of width ``w >= 2 dx``.  The Gaussian is interpreted as the kernel
itself at the small lag ``tau = k dt`` for which the local diffusion spreads
a point to width ``w``; the slice therefore covers times ``t >= s + tau`` and
is unbiased for locally constant coefficients.  Shorter lags are served by
the locally-frozen Gaussian :func:`gaussian_kernel`.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import io
from .errors import CacheError, CFLViolation, DomainError, DomainTooSmallError, PreconditionError
from .pme import CFL_SAFETY

KERNEL_MAGIC = b"RFXKERN1"
LEAK_TOL = 1e-2
RELIABLE_FACTOR = 5.0


def gaussian_kernel(x, y, lag, b, sigma):
    """Frozen-coefficient density of ``y + b lag + sigma B(lag)`` at ``x``."""
    var = sigma ** 2 * lag
    return np.exp(-0.5 * (x - y - b * lag) ** 2 / var) / np.sqrt(2 * np.pi * var)


def _coeff_rows(R, coeffs, k):
    """Diffusion ``a`` and flux weights for step ``k``.

    The drift flux is ``F_{j+1/2} = c1_j p_j + c2_{j+1} p_{j+1}``: centred
    (``c1 = c2 = b/2``) when the cell Peclet number ``|b| dx / (2a)`` is at
    most 1, where centring keeps the step positive and avoids the numerical
    diffusion of upwinding; upwind (``c1 = b+``, ``c2 = b-``) otherwise.
    """
    r = R.R[k]
    a = 0.5 * coeffs.sigma(r) ** 2
    b = coeffs.b(r)
    b = np.broadcast_to(b, r.shape).astype(float)
    a = np.broadcast_to(a, r.shape).astype(float)
    if np.all(np.abs(b) * R.dx <= 2.0 * a):
        return a, 0.5 * b, 0.5 * b
    return a, np.maximum(b, 0.0), np.minimum(b, 0.0)


def check_cfl(R, coeffs):
    dx, dt = R.dx, R.dt
    a_sup = 0.5 * coeffs.sup_sigma() ** 2
    dt_max = CFL_SAFETY / (2.0 * a_sup / dx ** 2 + coeffs.sup_b() / dx)
    if dt > dt_max * (1 + 1e-9):
        raise CFLViolation(dt, dt_max)
    return dt_max


def fp_step(P, a, bp, bm, lam, mu):
    """One forward step for columns of densities ``P`` (nodes on axis 0)."""
    if P.ndim == 2:
        a, bp, bm = a[:, None], bp[:, None], bm[:, None]
    aP = a * P
    F = bp[:-1] * P[:-1] + bm[1:] * P[1:]
    new = np.empty_like(P)
    new[1:-1] = P[1:-1] + mu * (aP[2:] - 2.0 * aP[1:-1] + aP[:-2]) - lam * (F[1:] - F[:-1])
    new[0] = 0.0
    new[-1] = 0.0
    return new


def adjoint_step(Q, a, bp, bm, lam, mu):
    """Transpose of :func:`fp_step`: one backward step of a test-function column."""
    if Q.ndim == 2:
        a, bp, bm = a[:, None], bp[:, None], bm[:, None]
    Qi = Q.copy()
    Qi[0] = 0.0
    Qi[-1] = 0.0
    new = Qi.copy()
    new[1:-1] += (mu * a[1:-1] * (Qi[2:] - 2.0 * Qi[1:-1] + Qi[:-2])
                  + lam * (bp[1:-1] * (Qi[2:] - Qi[1:-1]) + bm[1:-1] * (Qi[1:-1] - Qi[:-2])))
    # edge nodes only feed their interior neighbours
    new[0] = lam * bp[0] * Qi[1] + mu * a[0] * Qi[1]
    new[-1] = -lam * bm[-1] * Qi[-2] + mu * a[-1] * Qi[-2]
    return new


def propagate(R, coeffs, k0, P0, record, starts=None):
    """Advance density columns from grid time index ``k0``.

    ``record`` is an iterable of absolute time indices to keep.  ``starts``
    optionally gives a start index per column; a column is zero until its
    start, when it is set to the corresponding column of ``P0``.  Returns a
    dict ``index -> array`` and the final array.
    """
    check_cfl(R, coeffs)
    lam, mu = R.dt / R.dx, R.dt / R.dx ** 2
    record = set(int(k) for k in record)
    P0 = np.asarray(P0, dtype=float)
    if starts is None:
        P = P0.copy()
        pending = {}
    else:
        starts = np.asarray(starts)
        P = np.zeros_like(P0)
        pending = {}
        for c, k in enumerate(starts):
            pending.setdefault(int(k), []).append(c)
        k0 = min(k0, int(starts.min()))
    out = {}
    last = max(record) if record else k0
    for k in range(k0, last + 1):
        if k in pending:
            cols = pending.pop(k)
            P[:, cols] = P0[:, cols]
        if k in record:
            out[k] = P.copy()
        if k == last:
            break
        P = fp_step(P, *_coeff_rows(R, coeffs, k), lam, mu)
    return out, P


def lag_steps(width, sigma_loc, dt):
    """Steps after which local diffusion spreads a point to ``width``."""
    return max(1, int(np.ceil(width ** 2 / (sigma_loc ** 2 * dt) - 1e-9)))


def _gaussian_source(x, center, sd, dx):
    g = np.exp(-0.5 * ((x - center) / sd) ** 2)
    g[0] = g[-1] = 0.0
    return g / (np.sum(g) * dx)


def local_coefficients(R, coeffs, s, y):
    r = R.evaluate(s, y)
    return np.asarray(coeffs.b(r), dtype=float), np.asarray(coeffs.sigma(r), dtype=float)


@dataclass(frozen=True)
class KernelSlice:
    """``p(s, y; t, x)`` for ``t`` in ``t_grid`` (rows) and ``x`` in ``x_grid``.

    ``t_grid[0] = s + lag``; the first row is the starting Gaussian of width
    ``mollifier_width``.  ``leaked`` is the mass absorbed at the edges so far.
    """

    s: float
    y: float
    t_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray
    mollifier_width: float
    lag: float
    leaked: np.ndarray
    sigma_max: float
    requested_width: float = 0.0
    source_drift: float = 0.0

    @property
    def dx(self):
        return float(self.x_grid[1] - self.x_grid[0])

    def mass(self):
        return self.values.sum(axis=1) * self.dx

    def row(self, t):
        k = int(round((t - self.t_grid[0]) / (self.t_grid[1] - self.t_grid[0]))) if self.t_grid.size > 1 else 0
        if k < 0 or k >= self.t_grid.size or abs(self.t_grid[k] - t) > 1e-9:
            raise DomainError(f"time {t} is not covered by the slice (starts at {self.t_grid[0]})")
        return self.values[k]

    def variance(self, k):
        p = self.values[k]
        m = np.sum(self.x_grid * p) / np.sum(p)
        return float(np.sum((self.x_grid - m) ** 2 * p) / np.sum(p))

    def mollification_error_bound(self, k):
        """First-order error of one mollification lag at row ``k``.

        ``lag * |b| * sup |p_x| + w^2 / 2 * sup |p_xx|``: the lag moves the
        mean by ``b * lag`` and adds variance ``w^2``.
        """
        p = self.values[k]
        px = np.max(np.abs(np.diff(p))) / self.dx
        pxx = np.max(np.abs(np.diff(p, 2))) / self.dx ** 2
        return float(self.lag * abs(self.source_drift) * px + 0.5 * self.mollifier_width ** 2 * pxx)

    def reliable_lag(self):
        """Lags below this are outside the window where the slice is trusted."""
        return RELIABLE_FACTOR * self.requested_width ** 2 / self.sigma_max ** 2


def kernel_forward(R, coeffs, s, y, mollifier_width=None, check_leak=True):
    """Forward slice from the source ``(s, y)``; ``s`` must be a grid time.

    Raises :class:`DomainTooSmallError` when more than ``LEAK_TOL`` of the
    mass reaches the absorbing edges, unless ``check_leak`` is false.
    """
    ks = R.time_index(s)
    if not R.x[0] < y < R.x[-1]:
        raise DomainError(f"source {y} outside the spatial grid")
    w = max(2.0 * R.dx, mollifier_width or 0.0)
    b0, s0 = (float(v) for v in local_coefficients(R, coeffs, s, y))
    kw = lag_steps(w, s0, R.dt)
    if ks + kw > R.t.size - 1:
        raise PreconditionError("source too close to the end of the grid for a kernel slice")
    tau = kw * R.dt
    sd = s0 * np.sqrt(tau)
    p0 = _gaussian_source(R.x, y + b0 * tau, sd, R.dx)
    rec = range(ks + kw, R.t.size)
    out, _ = propagate(R, coeffs, ks + kw, p0, rec)
    values = np.array([out[k] for k in rec])
    leaked = 1.0 - values.sum(axis=1) * R.dx
    if check_leak and np.max(leaked) > LEAK_TOL:
        raise DomainTooSmallError(f"kernel from ({s}, {y}) leaks {np.max(leaked):.3g} of its mass")
    return KernelSlice(s=float(s), y=float(y), t_grid=R.t[ks + kw:].copy(), x_grid=R.x.copy(),
                       values=values, mollifier_width=float(sd), lag=float(tau), leaked=leaked,
                       sigma_max=float(coeffs.sup_sigma()), requested_width=float(w), source_drift=b0)


def kernel_batch(R, coeffs, s, ys, record_times, mollifier_width=None, check_leak=True):
    """Kernels from sources ``(s, ys[i])`` read at ``record_times``.

    Returns ``(values, lags)`` with ``values[i, m]`` the density of source
    ``i`` at ``record_times[m]``; entries with ``t - s`` below the source's lag
    are NaN (callers substitute :func:`gaussian_kernel`).
    """
    ks = R.time_index(s)
    ys = np.asarray(ys, dtype=float)
    w = max(2.0 * R.dx, mollifier_width or 0.0)
    b0, s0 = local_coefficients(R, coeffs, s, ys)
    b0 = np.broadcast_to(b0, ys.shape)
    s0 = np.broadcast_to(s0, ys.shape)
    kws = np.array([lag_steps(w, si, R.dt) for si in s0])
    taus = kws * R.dt
    P0 = np.stack([_gaussian_source(R.x, y + b * t, si * np.sqrt(t), R.dx)
                   for y, b, si, t in zip(ys, b0, s0, taus)], axis=1)
    rec_idx = [R.time_index(t) for t in record_times]
    out, _ = propagate(R, coeffs, ks, P0, rec_idx, starts=ks + kws)
    values = np.full((ys.size, len(rec_idx), R.x.size), np.nan)
    for m, k in enumerate(rec_idx):
        if k in out:
            ok = ks + kws <= k
            values[ok, m] = out[k][:, ok].T
            leak = 1.0 - out[k][:, ok].sum(axis=0) * R.dx
            if check_leak and leak.size and np.max(leak) > LEAK_TOL:
                raise DomainTooSmallError(f"kernel batch from s={s} leaks {np.max(leak):.3g} of its mass")
    return values, taus


# Gaussian bounds ---------------------------------------------------------

def _lambertw_exp(z):
    """Principal branch ``W(exp(z))`` for real ``z`` without overflow."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 500.0
    out[small] = special.lambertw(np.exp(z[small])).real
    big = ~small
    if np.any(big):
        w = z[big] - np.log(z[big])
        for _ in range(50):
            # Newton on w + log w = z
            w = w - (w + np.log(w) - z[big]) / (1.0 + 1.0 / w)
        out[big] = w
    return out


def fit_bound_constants(tau, dist2, p):
    """Smallest ``C >= 1`` for the lower and upper Gaussian bound at each point.

    Lower: ``C^-1 tau^-1/2 exp(-C d^2/tau) <= p``; upper:
    ``p <= C tau^-1/2 exp(-d^2/(C tau))``.  Points with ``p <= 0`` give an
    infinite lower constant.
    """
    tau, dist2, p = (np.asarray(v, dtype=float) for v in np.broadcast_arrays(tau, dist2, p))
    u = dist2 / tau
    pos = p > 0
    L = np.where(pos, np.log(np.where(pos, p, 1.0) * np.sqrt(tau)), 0.0)
    with np.errstate(divide="ignore"):
        logu = np.log(u)
    C_lo = np.ones_like(u)
    need = pos & (-L > u)
    zero_u = need & (u == 0)
    C_lo[zero_u] = np.exp(-L[zero_u])
    nz = need & (u > 0)
    C_lo[nz] = _lambertw_exp(logu[nz] - L[nz]) / u[nz]
    C_lo[~pos] = np.inf
    C_up = np.ones_like(u)
    need = pos & (L > -u)
    zero_u = need & (u == 0)
    C_up[zero_u] = np.exp(L[zero_u])
    nz = need & (u > 0)
    C_up[nz] = u[nz] / _lambertw_exp(logu[nz] - L[nz])
    return np.maximum(C_lo, 1.0), np.maximum(C_up, 1.0)


def check_gaussian_bounds(slice_, T, window=4.0, min_lag_factor=10.0):
    """Fit the two Gaussian-bound constants on the admissible window of a slice.

    Points with ``t - s >= 10 w^2`` (``w`` the mollifier width), ``t <= T``
    and ``|x - y| <= window * sigma_max * sqrt(t - s)`` are used.  Returns
    ``(C_lower, C_upper, passed)``; ``passed`` is False when either constant
    is infinite or no admissible point exists.
    """
    tau = slice_.t_grid - slice_.s
    rows = (tau >= min_lag_factor * slice_.mollifier_width ** 2) & (slice_.t_grid <= T + 1e-12)
    if not np.any(rows):
        return np.inf, np.inf, False
    tt = tau[rows][:, None]
    d = slice_.x_grid[None, :] - slice_.y
    mask = np.abs(d) <= window * slice_.sigma_max * np.sqrt(tt)
    P = slice_.values[rows]
    tt_b = np.broadcast_to(tt, P.shape)[mask]
    d2 = np.broadcast_to(d ** 2, P.shape)[mask]
    C_lo, C_up = fit_bound_constants(tt_b, d2, P[mask])
    cl, cu = float(np.max(C_lo)), float(np.max(C_up))
    return cl, cu, bool(np.isfinite(cl) and np.isfinite(cu))


# Chapman-Kolmogorov and transport checks ---------------------------------

def chapman_kolmogorov_residual(R, coeffs, s, y, r_mid, t, mollifier_width=None, source_stride=2,
                                relative=False):
    """``sup_x |p(s,y;t,x) - int p(s,y;r,z) p(r,z;t,x) dz|``.

    Intermediate sources ``z`` are grid nodes (every ``source_stride``-th)
    where the outer density is non-negligible.  With ``r_mid == s`` the
    outer factor is the starting Gaussian of the slice.  ``relative=True``
    divides by the peak of ``p(s,y;t,.)``.  Leakage is checked on the outer
    slice only: inner kernels from far sources carry negligible weight.
    """
    if not s <= r_mid < t:
        raise PreconditionError("need s <= r_mid < t")
    outer_slice = kernel_forward(R, coeffs, s, y, mollifier_width)
    direct = outer_slice.row(t)
    if r_mid == s:
        outer = outer_slice.values[0]
    else:
        outer = outer_slice.row(r_mid)
    idx = np.arange(1, R.x.size - 1, source_stride)
    idx = idx[outer[idx] > 1e-9 * outer.max()]
    z = R.x[idx]
    inner, _ = kernel_batch(R, coeffs, r_mid, z, [t], mollifier_width, check_leak=False)
    inner = inner[:, 0, :]
    if np.any(np.isnan(inner)):
        raise PreconditionError("t - r_mid shorter than the inner kernels' lag")
    composed = (outer[idx] * R.dx * source_stride) @ inner
    res = float(np.max(np.abs(direct - composed)))
    return res / float(direct.max()) if relative else res


def transport_identity_error(R, coeffs, s, t, source_stride=2, mollifier_width=None):
    """Weighted-L1 discrepancy of ``int R_x(s,y) p(s,y;t,.) dy`` against ``R_x(t,.)``."""
    ks = R.time_index(s)
    idx = np.arange(1, R.x.size - 1, source_stride)
    w = R.Rx[ks, idx]
    idx = idx[w > 1e-12 * w.max()]
    # sources near the edges may leak, but their weight is negligible
    vals, _ = kernel_batch(R, coeffs, s, R.x[idx], [t], mollifier_width, check_leak=False)
    approx = (R.Rx[ks, idx] * R.dx * source_stride) @ np.nan_to_num(vals[:, 0, :])
    target = R.Rx[R.time_index(t)]
    return float(np.sum(np.abs(approx - target)) / np.sum(target))


# kernel families and their cache ---------------------------------------------

@dataclass
class KernelFamily:
    """Kernels from a grid of sources read on a grid of targets.

    ``values[i, j, m, l] = p(s_i, y_j; t_m, x_l)``; NaN where ``t_m - s_i`` is
    below the source lag (see ``lags[i, j]``).
    """

    s: np.ndarray
    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    values: np.ndarray
    lags: np.ndarray
    mollifier_width: float
    meta: dict = field(default_factory=dict)

    def save(self, path):
        counts = [self.s.size, self.y.size, self.t.size, self.x.size]
        ext = np.concatenate([[self.mollifier_width], self.s, self.y, self.t, self.x])
        vals = np.nan_to_num(self.values, nan=-1.0)
        io.write_binary(path, KERNEL_MAGIC, counts, ext, [vals, self.lags])

    @classmethod
    def load(cls, path):
        counts, ext, (vals, lags) = io.read_binary(
            path, KERNEL_MAGIC, lambda c: [tuple(c), (c[0], c[1])])
        ns, ny, nt, nx = counts
        ext = np.asarray(ext)
        parts = np.split(ext[1:], np.cumsum([ns, ny, nt]))
        vals = np.where(vals < 0, np.nan, vals)
        return cls(parts[0], parts[1], parts[2], parts[3], vals, lags, float(ext[0]))

    def lookup(self, i, j, m):
        v = self.values[i, j, m]
        if np.any(np.isnan(v)):
            raise CacheError(f"kernel entry ({i}, {j}, {m}) is missing")
        return v


def kernel_family(R, coeffs, s_list, y_list, t_list, x_targets=None, mollifier_width=None):
    """All kernels from ``s_list x y_list`` read at ``t_list`` on ``x_targets`` (grid nodes)."""
    x_idx = _target_indices(R, x_targets)
    s_list = np.asarray(s_list, dtype=float)
    y_list = np.asarray(y_list, dtype=float)
    t_list = np.asarray(t_list, dtype=float)
    values = np.full((s_list.size, y_list.size, t_list.size, x_idx.size), np.nan)
    lags = np.zeros((s_list.size, y_list.size))
    w = max(2.0 * R.dx, mollifier_width or 0.0)
    for i, s in enumerate(s_list):
        later = t_list > s + 1e-12
        if not np.any(later):
            continue
        vals, taus = kernel_batch(R, coeffs, s, y_list, t_list[later], w)
        values[i][:, later] = vals[:, :, x_idx]
        lags[i] = taus
    return KernelFamily(s_list, y_list, t_list, R.x[x_idx].copy(), values, lags, w)


def _target_indices(R, x_targets):
    if x_targets is None:
        return np.arange(R.x.size)
    x_targets = np.asarray(x_targets, dtype=float)
    idx = np.rint((x_targets - R.x[0]) / R.dx).astype(int)
    if np.any(idx < 0) or np.any(idx >= R.x.size) or np.any(np.abs(R.x[idx] - x_targets) > 1e-9):
        raise PreconditionError("kernel targets must be grid nodes")
    return idx


def cache_key(coeffs, law, R, *parts):
    h = hashlib.sha256()
    for item in (coeffs.fingerprint(), law.fingerprint(),
                 repr((R.x[0], R.x[-1], R.x.size, R.t[0], R.t[-1], R.t.size))) + tuple(map(repr, parts)):
        h.update(item.encode())
        h.update(b"\0")
    return h.hexdigest()
