"""Hydrodynamic limit: the porous-medium Cauchy problem in CDF form.

Solves ``R_t = -B(R)_x + Sigma(R)_xx`` with ``R(0, .) = F_lambda`` by an
explicit conservative scheme: Engquist-Osher upwinding of the convective flux
(``B = B_plus + B_minus`` split by the sign of ``b``) and a centred second
difference of ``Sigma(R)``.  Under the stability bound the scheme is monotone,
so every time row stays nondecreasing and inside [0, 1].
"""

from dataclasses import dataclass

import numpy as np

from . import io
from .errors import CFLViolation, DomainTooSmallError, PreconditionError, SchemeFailureError, DomainError

GRID_MAGIC = b"RFXGRID1"
CFL_SAFETY = 0.4
BOUNDARY_TOL = 1e-6
# first interior node; a larger value means mass is leaking through the Dirichlet edge
PADDING_TOL = 1e-4


@dataclass(frozen=True)
class SolutionGrid:
    """``R`` and ``R_x`` on a uniform space-time grid (rows are times)."""

    x: np.ndarray
    t: np.ndarray
    R: np.ndarray
    Rx: np.ndarray

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def max_gradient(self):
        return float(np.max(self.Rx))

    def time_index(self, t, tol=1e-9):
        """Index of grid time ``t``; raises if ``t`` is not (close to) a grid time."""
        if self.t.size == 1:
            if abs(t - self.t[0]) > tol:
                raise DomainError(f"time {t} not on grid")
            return 0
        k = int(round((t - self.t[0]) / self.dt))
        if k < 0 or k >= self.t.size or abs(self.t[k] - t) > tol * max(1.0, self.dt):
            raise DomainError(f"time {t} is not a grid time")
        return k

    def _time_weights(self, t):
        if t < self.t[0] - 1e-12 or t > self.t[-1] + 1e-12:
            raise DomainError(f"time {t} outside solution grid [{self.t[0]}, {self.t[-1]}]")
        if self.t.size == 1:
            return 0, 0, 0.0
        pos = (t - self.t[0]) / self.dt
        k = min(int(np.floor(pos + 1e-9)), self.t.size - 1)
        k = max(k, 0)
        w = min(max(pos - k, 0.0), 1.0)
        return k, min(k + 1, self.t.size - 1), w

    def _interp_row(self, field, k0, k1, w, x):
        x = np.asarray(x, dtype=float)
        pos = (x - self.x[0]) / self.dx
        j = np.clip(np.floor(pos).astype(np.int64), 0, self.x.size - 2)
        f = np.clip(pos - j, 0.0, 1.0)
        row0 = field[k0]
        v = (1 - f) * row0[j] + f * row0[j + 1]
        if w > 0.0:
            row1 = field[k1]
            v = (1 - w) * v + w * ((1 - f) * row1[j] + f * row1[j + 1])
        return v

    def evaluate(self, t, x):
        """Bilinear interpolation of ``R`` at scalar time ``t``; 0/1 outside the x-range."""
        k0, k1, w = self._time_weights(t)
        x = np.asarray(x, dtype=float)
        v = self._interp_row(self.R, k0, k1, w, x)
        v = np.where(x <= self.x[0], 0.0, v)
        return np.where(x >= self.x[-1], 1.0, v)

    def evaluate_gradient(self, t, x):
        k0, k1, w = self._time_weights(t)
        x = np.asarray(x, dtype=float)
        v = self._interp_row(self.Rx, k0, k1, w, x)
        return np.where((x < self.x[0]) | (x > self.x[-1]), 0.0, v)

    def moment(self, k, order):
        """``int |x|^order dR(t_k, x)`` by trapezoid quadrature on ``R_x``."""
        return float(np.trapezoid(np.abs(self.x) ** order * self.Rx[k], self.x))

    def to_csv(self, path, prov=None, time_stride=1):
        ks = list(range(0, self.t.size, time_stride))
        if ks[-1] != self.t.size - 1:
            ks.append(self.t.size - 1)  # the final time is always exported
        rows = ((self.t[k], self.x[j], self.R[k, j], self.Rx[k, j]) for k in ks for j in range(self.x.size))
        io.write_csv(path, ["t", "x", "R", "Rx"], rows, prov)

    def save(self, path):
        io.write_binary(path, GRID_MAGIC, [self.t.size, self.x.size],
                        [self.t[0], self.t[-1], self.x[0], self.x[-1]], [self.R, self.Rx])

    @classmethod
    def load(cls, path):
        counts, ext, (R, Rx) = io.read_binary(path, GRID_MAGIC, lambda c: [(c[0], c[1])] * 2)
        t = np.linspace(ext[0], ext[1], counts[0])
        x = np.linspace(ext[2], ext[3], counts[1])
        return cls(x=x, t=t, R=R, Rx=Rx)

    @classmethod
    def from_function(cls, F, x, t, dFdx=None):
        """Tabulate a closed-form ``F(t, x)`` (used for analytic oracles)."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        R = np.array([F(tk, x) for tk in t])
        Rx = np.array([dFdx(tk, x) for tk in t]) if dFdx is not None else gradient(R, x[1] - x[0])
        return cls(x=x, t=t, R=R, Rx=Rx)


def gradient(R, dx):
    """Centred differences (one-sided at the edges), clamped at 0."""
    return np.maximum(np.gradient(R, dx, axis=-1), 0.0)


def cfl_bound(anti, dx):
    """Largest stable time step: ``0.4 / (2 sup(sigma^2/2)/dx^2 + sup|b|/dx)``."""
    return CFL_SAFETY / (2.0 * anti.a_sup / dx ** 2 + anti.b_sup / dx)


def default_domain(law, coeffs, T, tail=1e-9, dx=None):
    """Effective support of ``law`` padded by drift transport and 6 diffusion lengths.

    With ``dx`` the ends are rounded outward to multiples of ``dx``.
    """
    lo, hi = law.effective_support(tail)
    pad = coeffs.sup_b() * T + 6.0 * coeffs.sup_sigma() * np.sqrt(max(T, 0.0))
    lo, hi = lo - pad, hi + pad
    if dx is not None:
        lo, hi = np.floor(lo / dx) * dx, np.ceil(hi / dx) * dx
    return float(lo), float(hi)


def uniform_grid(x_min, x_max, dx):
    cells = (x_max - x_min) / dx
    ncell = int(round(cells))
    if ncell < 2 or abs(cells - ncell) > 1e-6 * max(1.0, cells):
        raise PreconditionError("domain length must be an integer multiple of dx")
    return np.linspace(x_min, x_max, ncell + 1)


def time_steps(T, dt, dt_max, multiple=1):
    """Number of steps and step size covering [0, T]."""
    if T == 0:
        return 0, 0.0
    if dt is None:
        nsteps = int(np.ceil(T / dt_max / multiple - 1e-9)) * multiple
        return nsteps, T / nsteps
    if dt > dt_max * (1 + 1e-12):
        raise CFLViolation(dt, dt_max)
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise PreconditionError("dt must divide T")
    return nsteps, T / nsteps


def solve_pme(law, anti, domain, T, dx, dt=None, step_multiple=1):
    """Solve the Cauchy problem for ``R`` on ``domain x [0, T]``.

    ``dt=None`` picks the largest stable step dividing ``T`` (and a multiple
    of ``step_multiple`` steps).  Raises :class:`CFLViolation` for an unstable
    ``dt``, :class:`SchemeFailureError` if a row loses monotonicity and
    :class:`DomainTooSmallError` if mass reaches the boundary.
    """
    x = uniform_grid(domain[0], domain[1], dx)
    dx = float(x[1] - x[0])
    nsteps, dt = time_steps(T, dt, cfl_bound(anti, dx), step_multiple)
    t = np.linspace(0.0, T, nsteps + 1)

    R = np.empty((nsteps + 1, x.size))
    R[0] = law.cdf(x)
    if R[0, 0] > BOUNDARY_TOL or R[0, -1] < 1.0 - BOUNDARY_TOL:
        raise DomainTooSmallError("initial law has mass outside the spatial domain")
    lam, mu = dt / dx, dt / dx ** 2
    cur = R[0].copy()
    for n in range(nsteps):
        S = anti.Sigma(cur)
        flux = anti.B_plus(cur[:-1]) + anti.B_minus(cur[1:])
        new = np.empty_like(cur)
        new[1:-1] = cur[1:-1] - lam * (flux[1:] - flux[:-1]) + mu * (S[2:] - 2.0 * S[1:-1] + S[:-2])
        new[0], new[-1] = 0.0, 1.0
        if np.min(np.diff(new)) < -1e-9:
            raise SchemeFailureError(n + 1, "monotonicity lost")
        if new[1] > PADDING_TOL or new[-2] < 1.0 - PADDING_TOL:
            raise DomainTooSmallError(f"step {n + 1}: solution reaches the domain boundary")
        np.clip(new, 0.0, 1.0, out=new)
        R[n + 1] = new
        cur = new
    return SolutionGrid(x=x, t=t, R=R, Rx=gradient(R, dx))


def _window_indices(grid, window):
    t1, t2, x1, x2 = window
    idx = []
    for val, axis, step in ((t1, grid.t, grid.dt), (t2, grid.t, grid.dt),
                            (x1, grid.x, grid.dx), (x2, grid.x, grid.dx)):
        k = int(round((val - axis[0]) / step)) if step > 0 else 0
        if k < 0 or k >= axis.size or abs(axis[k] - val) > 1e-6 * step:
            raise PreconditionError(f"window edge {val} is not a grid node inside the grid")
        idx.append(k)
    return idx


def weak_form_residual(grid, anti, zeta, window):
    """Absolute residual of the generalized-solution identity on ``window``.

    ``window = (t1, t2, x1, x2)`` must lie on grid nodes; ``zeta`` must vanish
    at ``x1`` and ``x2``.  Integrals use the trapezoid rule on grid nodes.
    """
    k1, k2, j1, j2 = _window_indices(grid, window)
    t = grid.t[k1:k2 + 1]
    x = grid.x[j1:j2 + 1]
    edge = np.abs(np.concatenate([zeta.f(t, x[0]) * np.ones_like(t), zeta.f(t, x[-1]) * np.ones_like(t)]))
    if np.max(edge) > 1e-12:
        raise PreconditionError("test function must vanish at x1 and x2")
    T, X = np.meshgrid(t, x, indexing="ij")
    Rw = grid.R[k1:k2 + 1, j1:j2 + 1]
    integrand = zeta.f_x(T, X) * anti.B(Rw) + zeta.f_xx(T, X) * anti.Sigma(Rw) + zeta.f_t(T, X) * Rw
    lhs = np.trapezoid(np.trapezoid(integrand, x, axis=1), t)
    rhs = (np.trapezoid(zeta.f(t[-1], x) * Rw[-1], x) - np.trapezoid(zeta.f(t[0], x) * Rw[0], x)
           + np.trapezoid(zeta.f_x(t, x[-1]) * anti.Sigma(Rw[:, -1]), t)
           - np.trapezoid(zeta.f_x(t, x[0]) * anti.Sigma(Rw[:, 0]), t))
    return float(abs(lhs - rhs))
