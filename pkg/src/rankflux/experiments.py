"""Statistical harnesses: chaos rates, fluctuation CLT, prelimit identity, kernel cross-check.

Every harness draws replication ``r`` from the substream ``(master, label, r)``
and processes replications in fixed-size chunks in replication order, so the
reported numbers do not depend on the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import io, rng
from .coefficients import discretized_step_functions
from .errors import ConfigurationError, DomainError, PreconditionError
from .initial import sample_iid
from .kernel import gaussian_kernel, kernel_forward
from .particles import _step_rank, draw_replication, iterate_coupled, n_steps, rank_quantiles
from .spde import observable_covariance
from .wasserstein import loglog_slope, sorted_difference_wp

CHUNK = 25
A_POINTS = 16
X_POINTS = 6


def _map(fn, tasks, threads=1):
    """Ordered map over ``tasks``; results are independent of ``threads``."""
    tasks = list(tasks)
    if threads is None or threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _chunks(count, size=CHUNK):
    return [range(i, min(i + size, count)) for i in range(0, count, size)]


# reports -----------------------------------------------------------------

@dataclass
class ExperimentReport:
    """Result of one harness run.

    ``table`` holds equal-length columns (one row per ``n`` or per observable)
    and is what the summary CSV contains; ``seed`` and ``replications`` are
    recorded next to every number so each estimate can be regenerated.
    """

    name: str
    config_hash: str
    seed: int
    replications: int
    table: dict
    slopes: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "config_hash": self.config_hash, "seed": self.seed,
                "replications": self.replications, "table": self.table, "slopes": self.slopes,
                "intervals": self.intervals, "pvalues": self.pvalues, "extra": self.extra,
                "runtime": self.runtime}

    def to_json(self, path):
        io.write_json(path, self.to_dict())

    def to_csv(self, path, prov=None):
        cols = list(self.table)
        rows = zip(*(self.table[c] for c in cols))
        io.write_csv(path, cols, rows, prov)


# propagation of chaos ----------------------------------------------------

def _chaos_chunk(law, coeffs, R, p, n, steps, dt, master, label, reps):
    draws = [draw_replication(law, n, steps, dt, rng.stream(master, label, r)) for r in reps]
    X0 = np.stack([d[0] for d in draws])
    dB = np.stack([d[1] for d in draws], axis=1)
    sup_particle = np.zeros(X0.shape)
    sup_w = np.zeros(X0.shape[0])
    for _, _, X, Xb in iterate_coupled(X0, coeffs, R, dt, dB):
        np.maximum(sup_particle, np.abs(X - Xb) ** p, out=sup_particle)
        np.maximum(sup_w, sorted_difference_wp(X, Xb, p), out=sup_w)
    return sup_particle, sup_w


def _bootstrap_mean(values, B, stream):
    idx = stream.integers(0, values.size, size=(B, values.size))
    return values[idx].mean(axis=1)


def chaos_rate(law, coeffs, R, p, n_list, T, dt, replications, master, config_hash="",
               threads=1, bootstrap=1000, level=0.95, label="chaos"):
    """Coupling error between the rank-based system and its surrogate.

    For each ``n`` and replication the coupled systems are run from a shared
    sample with shared increments and three sup-over-steps statistics are kept:

    * ``particle``: ``(1/n) sum_i sup_t |X_i - Xbar_i|^p`` (exchangeable
      estimator of ``E sup_t |X_1 - Xbar_1|^p``);
    * ``first``: ``sup_t |X_1 - Xbar_1|^p`` alone;
    * ``wasserstein``: ``sup_t W_p(rho_n, rhobar_n)^p`` by sorted differences.

    ``wasserstein <= particle`` holds pathwise, since the sorted matching is
    optimal and the identity matching is admissible at every step.
    """
    steps = n_steps(T, dt)
    n_list = [int(n) for n in n_list]
    cols = {k: [] for k in ("n", "particle", "particle_stderr", "first", "first_stderr",
                            "wasserstein", "wasserstein_stderr", "particle_lo", "particle_hi")}
    boots, pathwise = [], []
    alpha = (1.0 - level) / 2.0
    for n in n_list:
        lab = f"{label}/n={n}"
        parts = _map(lambda reps: _chaos_chunk(law, coeffs, R, p, n, steps, dt, master, lab, reps),
                     _chunks(replications), threads)
        sup_particle = np.concatenate([a for a, _ in parts])
        sup_w = np.concatenate([b for _, b in parts])
        particle = sup_particle.mean(axis=1)
        first = sup_particle[:, 0]
        pathwise.append(np.mean(sup_w <= particle * (1 + 1e-12) + 1e-300))
        bs = _bootstrap_mean(particle, bootstrap, rng.stream(master, f"{label}/bootstrap", n))
        boots.append(bs)
        se = lambda v: float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        cols["n"].append(n)
        cols["particle"].append(float(particle.mean()))
        cols["particle_stderr"].append(se(particle))
        cols["first"].append(float(first.mean()))
        cols["first_stderr"].append(se(first))
        cols["wasserstein"].append(float(sup_w.mean()))
        cols["wasserstein_stderr"].append(se(sup_w))
        cols["particle_lo"].append(float(np.quantile(bs, alpha)))
        cols["particle_hi"].append(float(np.quantile(bs, 1 - alpha)))
    slopes, intervals = {}, {}
    if len(n_list) >= 2:
        for key in ("particle", "first", "wasserstein"):
            vals = np.array(cols[key])
            slopes[key] = loglog_slope(n_list, vals) if np.all(vals > 0) else float("nan")
        bslopes = np.array([loglog_slope(n_list, row) for row in np.stack(boots, axis=1)
                            if np.all(row > 0)])
        if bslopes.size:
            intervals["particle_slope"] = [float(np.quantile(bslopes, alpha)),
                                           float(np.quantile(bslopes, 1 - alpha))]
    return ExperimentReport(
        name="chaos", config_hash=config_hash, seed=master, replications=replications, table=cols,
        slopes=slopes, intervals=intervals,
        extra={"p": p, "T": T, "dt": dt, "steps": steps, "pathwise_fraction": pathwise,
               "sup_grid": "every Euler step"},
        runtime={"chunk": CHUNK, "bootstrap": bootstrap},
    )


# observables -------------------------------------------------------------

@dataclass(frozen=True)
class ObservableSpec:
    """``int gamma(t, x) G_n(t, dx)`` (kind ``"G"``) or its time integral over [0, t] (``"H"``)."""

    gamma: object
    kind: str
    t: float
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("G", "H"):
            raise ConfigurationError(f"observable kind must be 'G' or 'H', got {self.kind!r}")
        if self.t < 0:
            raise ConfigurationError("observable time must be non-negative")
        lo, hi = self.gamma.support
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ConfigurationError("gamma needs a finite support interval")

    def check_window(self, window):
        lo, hi = self.gamma.support
        if lo < window[0] or hi > window[1]:
            raise DomainError(f"support {self.gamma.support} of observable {self.label!r} "
                              f"leaves the window {tuple(window)}")


def _gl(m):
    z, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (z + 1.0), 0.5 * w


def _gamma_R_integral(gamma, R, t):
    """``int gamma(t, x) R(t, x) dx``: Gauss-Legendre on every cell of R's grid."""
    lo, hi = gamma.support
    if lo < R.x[0] or hi > R.x[-1]:
        raise DomainError(f"support {gamma.support} outside the solution grid")
    edges = np.unique(np.concatenate([[lo, hi], R.x[(R.x > lo) & (R.x < hi)]]))
    z, w = _gl(X_POINTS)
    h = np.diff(edges)
    pts = (edges[:-1, None] + h[:, None] * z).ravel()
    wts = (h[:, None] * w).ravel()
    return float(np.sum(wts * gamma.f(t, pts) * R.evaluate(t, pts)))


def _gamma_F_integral(gamma, t, X):
    """``int gamma(t, x) F_n(x) dx`` exactly, through the antiderivative of gamma."""
    A = gamma.antiderivative
    if A is None:
        raise PreconditionError("observables against empirical CDFs need gamma.antiderivative")
    top = A(t, gamma.support[1])
    return np.mean(top - A(t, X), axis=-1)


def _snapshots(paths):
    if hasattr(paths, "interacting"):
        return np.asarray(paths.times, dtype=float), np.asarray(paths.interacting, dtype=float)
    times, X = paths
    return np.asarray(times, dtype=float), np.asarray(X, dtype=float)


def _time_index(times, t):
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise DomainError(f"no snapshot at time {t}")
    return k


def _g_value(gamma, t, X, R):
    n = X.shape[-1]
    return np.sqrt(n) * (_gamma_F_integral(gamma, t, X) - _gamma_R_integral(gamma, R, t))


def compute_observable(spec, paths, R):
    """Value of an observable on recorded snapshots.

    ``paths`` is a :class:`CoupledPaths` (its interacting system is used) or
    a pair ``(times, X)`` with ``X[k]`` the positions at ``times[k]``, possibly
    batched.  Kind ``"H"`` integrates the ``"G"`` integrand over the snapshot
    times in [0, t] by the trapezoid rule; those snapshots must start at 0.
    """
    times, X = _snapshots(paths)
    if spec.kind == "G":
        k = _time_index(times, spec.t)
        return _g_value(spec.gamma, spec.t, X[k], R)
    k = _time_index(times, spec.t)
    if k == 0:
        return np.zeros(X.shape[1:-1]) if X.ndim > 2 else 0.0
    if abs(times[0]) > 1e-12:
        raise DomainError("H observables need snapshots starting at time 0")
    vals = np.array([_g_value(spec.gamma, times[j], X[j], R) for j in range(k + 1)])
    return np.trapezoid(vals, times[:k + 1], axis=0)


# fluctuation CLT ---------------------------------------------------------

def _clt_chunk(law, coeffs, R, specs, n, dt, steps, master, label, reps):
    c = len(reps)
    st = [rng.stream(master, label, r) for r in reps]
    X = np.stack([sample_iid(law, n, s) for s in st])
    out = np.zeros((c, len(specs)))
    h_prev = {}
    def record(k, X):
        t = k * dt
        for i, sp in enumerate(specs):
            kt = int(round(sp.t / dt))
            if sp.kind == "G" and k == kt:
                out[:, i] = _g_value(sp.gamma, t, X, R)
            elif sp.kind == "H" and k <= kt:
                g = _g_value(sp.gamma, t, X, R)
                if k > 0:
                    out[:, i] += 0.5 * dt * (g + h_prev[i])
                h_prev[i] = g
    record(0, X)
    for k in range(steps):
        dB = np.stack([s.standard_normal(n) for s in st]) * np.sqrt(dt)
        X = _step_rank(X, coeffs, dt, dB)
        record(k + 1, X)
    return out


def clt_experiment(law, coeffs, R, specs, n, replications, master, dt, config_hash="",
                   threads=1, label="clt", window=None):
    """Compare observables of ``replications`` particle systems with their Gaussian limit.

    Each replication draws an i.i.d. sample of size ``n`` and then one
    vector of ``n`` normals per step (per-replication stream order).  The
    limit covariance comes from :func:`rankflux.spde.observable_covariance`.
    Reports per observable the empirical mean and variance, the exact
    variance, their ratio, and the D'Agostino-Pearson normality p-value, plus
    empirical and exact correlation matrices.
    """
    specs = list(specs)
    for sp in specs:
        if window is not None:
            sp.check_window(window)
    steps = max(n_steps(sp.t, dt) if sp.t > 0 else 0 for sp in specs)
    lab = f"{label}/n={n}"
    parts = _map(lambda reps: _clt_chunk(law, coeffs, R, specs, n, dt, steps, master, lab, reps),
                 _chunks(replications), threads)
    V = np.concatenate(parts)
    exact = observable_covariance(R, coeffs, law, [(sp.kind, sp.gamma.f, sp.t) for sp in specs])
    emp_var = V.var(axis=0, ddof=1)
    ex_var = np.diag(exact)
    # the omnibus test needs at least 8 values
    pvals = [float(stats.normaltest(V[:, i]).pvalue) if V.shape[0] >= 8 else float("nan")
             for i in range(len(specs))]
    sd = np.sqrt(np.maximum(ex_var, 1e-300))
    table = {
        "observable": [sp.label or f"{sp.kind}{i}" for i, sp in enumerate(specs)],
        "kind": [sp.kind for sp in specs],
        "t": [sp.t for sp in specs],
        "mean": V.mean(axis=0).tolist(),
        "variance": emp_var.tolist(),
        "exact_variance": ex_var.tolist(),
        "ratio": (emp_var / ex_var).tolist(),
        "normality_p": pvals,
    }
    emp_corr = np.corrcoef(V, rowvar=False) if len(specs) > 1 else np.ones((1, 1))
    return ExperimentReport(
        name="clt", config_hash=config_hash, seed=master, replications=replications, table=table,
        pvalues={table["observable"][i]: pvals[i] for i in range(len(specs))},
        extra={"n": n, "dt": dt, "empirical_correlation": np.atleast_2d(emp_corr),
               "exact_correlation": exact / np.outer(sd, sd), "exact_covariance": exact,
               "normality_test": "D'Agostino-Pearson (skewness and kurtosis)"},
        runtime={"chunk": CHUNK},
    ), V


# prelimit identity -------------------------------------------------------

def coarsen_increments(dB, factor):
    """Sum consecutive blocks of ``factor`` increments (same Brownian path, larger step)."""
    dB = np.asarray(dB, dtype=float)
    if dB.shape[0] % factor:
        raise PreconditionError("number of increments is not a multiple of the factor")
    return dB.reshape((dB.shape[0] // factor, factor) + dB.shape[1:]).sum(axis=1)


def _x_nodes(gamma, R, X):
    lo, hi = gamma.support
    inner = lambda v: v[(v > lo) & (v < hi)]
    edges = np.unique(np.concatenate([[lo, hi], inner(X), inner(R.x)]))
    z, w = _gl(X_POINTS)
    h = np.diff(edges)
    return (edges[:-1, None] + h[:, None] * z).ravel(), (h[:, None] * w).ravel()


def prelimit_sides(paths, coeffs, anti, R, gamma, t):
    """Both sides of the prelimit identity for one recorded path; returns ``(lhs, rhs)``.

    ``lhs`` is the change of the observable ``int gamma G_n`` over [0, t]
    minus the time integral of ``gamma_s + gamma_x bbar + gamma_xx abar``
    against ``G_n``, where ``bbar`` and ``abar`` are the averages over
    ``a in [0, 1]`` of ``b`` and ``sigma^2/2`` at ``a F_n + (1 - a) R``.
    ``rhs`` is the Ito sum ``-n^{-1/2} sum_i sum_k gamma(s_k, X_i) sigma(q_i) dB_ik``
    plus ``sqrt(n)`` times the time integral of
    ``gamma_x (B_n - B)(F_n) + gamma_xx (Sigma_n - Sigma)(F_n)``.
    Time integrals are left-point sums over the Euler steps, matching the
    scheme; space integrals are exact up to Gauss-Legendre on panels between
    particles and grid nodes.
    """
    if paths.increments is None:
        raise ConfigurationError("prelimit identity needs paths recorded with retain_increments=True")
    times = np.asarray(paths.times)
    dt = paths.dt
    if times.size != paths.increments.shape[0] + 1 or (times.size > 1 and
                                                      np.max(np.abs(np.diff(times) - dt)) > 1e-9):
        raise ConfigurationError("prelimit identity needs snapshots at every step")
    lo, hi = gamma.support
    if lo < R.x[0] or hi > R.x[-1]:
        raise DomainError(f"support {gamma.support} outside the solution grid")
    K = _time_index(times, t)
    Xall = paths.interacting
    n = Xall.shape[-1]
    rn = np.sqrt(n)
    a, wa = _gl(A_POINTS)
    Bn, Sn = discretized_step_functions(coeffs, n)

    def fields(k):
        s = times[k]
        z, w = _x_nodes(gamma, R, Xall[k])
        F = np.searchsorted(np.sort(Xall[k]), z, side="right") / n
        return s, z, w, F, R.evaluate(s, z)

    def observable(k):
        s, z, w, F, Rv = fields(k)
        return rn * np.sum(w * gamma.f(s, z) * (F - Rv))

    drift = 0.0
    correction = 0.0
    ito = 0.0
    for k in range(K):
        s, z, w, F, Rv = fields(k)
        mix = a[:, None] * F + (1.0 - a[:, None]) * Rv
        bbar = wa @ coeffs.b(mix)
        abar = wa @ (0.5 * coeffs.sigma(mix) ** 2)
        gx, gxx = gamma.f_x(s, z), gamma.f_xx(s, z)
        drift += dt * rn * np.sum(w * (F - Rv) * (gamma.f_t(s, z) + gx * bbar + gxx * abar))
        correction += dt * rn * np.sum(w * (gx * (Bn(F) - anti.B(F)) + gxx * (Sn(F) - anti.Sigma(F))))
        Xk = Xall[k]
        ito += np.sum(gamma.f(s, Xk) * coeffs.sigma(rank_quantiles(Xk)) * paths.increments[k])
    lhs = observable(K) - observable(0) - drift
    rhs = -ito / rn + correction
    return float(lhs), float(rhs)


def prelimit_identity_residual(paths, coeffs, anti, R, gamma, t):
    """``|LHS - RHS|`` of the prelimit identity; see :func:`prelimit_sides`."""
    lhs, rhs = prelimit_sides(paths, coeffs, anti, R, gamma, t)
    return abs(lhs - rhs)


def prelimit_refinement(law, coeffs, anti, R, gamma, t, n, dts, replications, master,
                        config_hash="", threads=1, label="identity"):
    """Residual of the prelimit identity under time-step refinement.

    Each replication draws increments at the finest step; coarser levels use
    block sums of the same increments, so every level follows the same
    Brownian path from the same initial sample.  Reports the root mean square
    residual over replications at each step size.
    """
    from .particles import simulate_coupled
    dts = sorted((float(d) for d in dts), reverse=True)
    fine = dts[-1]
    factors = [int(round(d / fine)) for d in dts]
    if any(abs(f * fine - d) > 1e-9 * d for f, d in zip(factors, dts)):
        raise PreconditionError("step sizes must be integer multiples of the finest one")
    steps = n_steps(t, fine)

    def one(r):
        X0, dB = draw_replication(law, n, steps, fine, rng.stream(master, f"{label}/n={n}", r))
        res = []
        for f, d in zip(factors, dts):
            paths = simulate_coupled(law, coeffs, None, n, t, d, None, retain_increments=True,
                                     initial=X0, increments=coarsen_increments(dB, f))
            res.append(prelimit_identity_residual(paths, coeffs, anti, R, gamma, t))
        return res

    res = np.array(_map(one, range(replications), threads))
    rms = np.sqrt(np.mean(res ** 2, axis=0))
    table = {"dt": dts, "rms_residual": rms.tolist(), "mean_residual": res.mean(axis=0).tolist(),
             "max_residual": res.max(axis=0).tolist()}
    return ExperimentReport(
        name="identity", config_hash=config_hash, seed=master, replications=replications,
        table=table, slopes={"rms": loglog_slope(dts, rms) if np.all(rms > 0) else float("nan")},
        extra={"n": n, "t": t, "monotone_within_10pct": bool(np.all(rms[1:] <= 1.1 * rms[:-1])),
               "residuals": res},
        runtime={"unit": "replication"},
    )


# kernel Monte Carlo cross-check -----------------------------------------

@dataclass
class KernelCrosscheck:
    """Monte Carlo density estimate of a kernel slice against the PDE solve.

    ``discrepancy`` is ``sup |kde - kernel|``; it splits into the KDE
    smoothing bias ``bias = sup |kernel * phi_h - kernel|`` and the Monte
    Carlo part ``mc_component = sup |kde - kernel * phi_h|``, whose size is
    predicted by ``mc_stderr``.  ``leakage`` flags mass lost through the
    edges of the grid (paths leaving it, or absorbed kernel mass).
    """

    x: np.ndarray
    kde: np.ndarray
    kernel: np.ndarray
    bandwidth: float
    discrepancy: float
    mc_component: float
    bias: float
    mc_stderr: float
    mollifier_bound: float
    escaped_fraction: float
    kernel_leaked: float
    leakage: bool
    paths_count: int
    steps: int

    def budget(self, z=4.0):
        return self.bias + z * self.mc_stderr + self.mollifier_bound


def _kde(samples, x, h, chunk=4096):
    out = np.zeros(x.size)
    for i in range(0, samples.size, chunk):
        d = (x[:, None] - samples[None, i:i + chunk]) / h
        out += np.exp(-0.5 * d * d).sum(axis=1)
    return out / (samples.size * h * np.sqrt(2 * np.pi))


def mc_kernel_crosscheck(R, coeffs, s, y, t, paths_count, stream, bandwidth=None, steps=None,
                         mollifier_width=None):
    """Euler simulation of the surrogate diffusion from ``(s, y)`` versus ``kernel_forward``.

    The surrogate moves with ``b(R(r, X))``, ``sigma(R(r, X))``.  ``bandwidth``
    defaults to Silverman's rule (at least two grid cells); ``steps`` defaults
    to one per grid step of ``R`` (at most 400).
    """
    if not t > s:
        raise PreconditionError("cross-check needs t > s")
    sl = kernel_forward(R, coeffs, s, y, mollifier_width, check_leak=False)
    k = int(round((t - sl.t_grid[0]) / R.dt))
    if k < 0:
        raise PreconditionError("t is inside the mollification lag of the slice")
    row = sl.row(t)
    if steps is None:
        steps = int(min(max(1, np.ceil((t - s) / R.dt - 1e-9)), 400))
    h_t = (t - s) / steps
    X = np.full(paths_count, float(y))
    escaped = np.zeros(paths_count, dtype=bool)
    for j in range(steps):
        r = R.evaluate(s + j * h_t, X)
        X = X + coeffs.b(r) * h_t + coeffs.sigma(r) * np.sqrt(h_t) * stream.standard_normal(paths_count)
        escaped |= (X <= R.x[0]) | (X >= R.x[-1])
    if bandwidth is None:
        sd = np.std(X)
        iqr = np.subtract(*np.percentile(X, [75, 25]))
        spread = min(sd, iqr / 1.349) if iqr > 0 else sd
        bandwidth = max(0.9 * spread * paths_count ** -0.2, 2.0 * R.dx)
    h = float(bandwidth)
    x = sl.x_grid
    kde = _kde(X, x, h)
    # kernel smoothed by the same Gaussian: the KDE's expectation up to MC noise
    smooth = np.array([np.sum(row * gaussian_kernel(x, xi, h ** 2, 0.0, 1.0)) * R.dx for xi in x])
    stderr = np.sqrt(np.maximum(smooth, 0.0) / (paths_count * h * 2.0 * np.sqrt(np.pi)))
    leaked = float(sl.leaked[k])
    frac = float(escaped.mean())
    return KernelCrosscheck(
        x=x, kde=kde, kernel=row, bandwidth=h,
        discrepancy=float(np.max(np.abs(kde - row))),
        mc_component=float(np.max(np.abs(kde - smooth))),
        bias=float(np.max(np.abs(smooth - row))),
        mc_stderr=float(np.max(stderr)),
        mollifier_bound=sl.mollification_error_bound(k),
        escaped_fraction=frac, kernel_leaked=leaked,
        leakage=bool(frac > 1e-3 or leaked > 1e-3), paths_count=int(paths_count), steps=steps,
    )
