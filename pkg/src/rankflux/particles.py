"""Rank-based particle system and its coupled surrogate.

The interacting system moves each particle with ``b`` and ``sigma`` evaluated
at its own empirical-CDF value; the surrogate system uses the hydrodynamic
limit ``R`` instead.  Both are advanced by Euler-Maruyama from the same
initial positions with the same Brownian increments.

Arrays of positions may carry leading batch axes (independent replications);
the particle index is always the last axis.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParticleOverflowError, PreconditionError
from .initial import sample_iid


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if pos.ndim < 1 or pos.shape[-1] < 1:
            raise ValueError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")

    @property
    def n(self):
        return self.positions.shape[-1]


def _positions(obj):
    return obj.positions if isinstance(obj, ParticleEnsemble) else np.asarray(obj, dtype=float)


def rank_quantiles(ensemble):
    """Empirical CDF at each particle: ``#{j : X_j <= X_i} / n``.

    Tied particles all receive the largest rank of their tie group.
    """
    X = _positions(ensemble)
    n = X.shape[-1]
    order = np.argsort(X, axis=-1, kind="stable")
    xs = np.take_along_axis(X, order, axis=-1)
    idx = np.broadcast_to(np.arange(n), X.shape)
    is_end = np.ones(X.shape, dtype=bool)
    is_end[..., :-1] = xs[..., 1:] != xs[..., :-1]
    group_end = np.where(is_end, idx, n)
    group_end = np.flip(np.minimum.accumulate(np.flip(group_end, -1), axis=-1), -1)
    q = np.empty(X.shape)
    np.put_along_axis(q, order, (group_end + 1) / n, axis=-1)
    return q


def empirical_cdf(ensemble, x):
    """``#{i : X_i <= x} / n`` for a single (unbatched) ensemble."""
    X = np.sort(_positions(ensemble))
    if X.ndim != 1:
        raise ValueError("empirical_cdf takes one ensemble; loop over batches")
    return np.searchsorted(X, np.asarray(x, dtype=float), side="right") / X.size


def _check_finite(X):
    bad = ~np.isfinite(X)
    if np.any(bad):
        flat = int(np.flatnonzero(bad.reshape(-1, X.shape[-1]).any(axis=0))[0])
        raise ParticleOverflowError(flat)


def _step_rank(X, coeffs, dt, dB):
    q = rank_quantiles(X)
    new = X + coeffs.b(q) * dt + coeffs.sigma(q) * dB
    _check_finite(new)
    return new


def _step_limit(X, t, coeffs, R, dt, dB):
    r = R.evaluate(t, X)
    new = X + coeffs.b(r) * dt + coeffs.sigma(r) * dB
    _check_finite(new)
    return new


def step_interacting(ensemble, coeffs, dt, increments):
    """One Euler-Maruyama step of the rank-based system."""
    X = _positions(ensemble)
    dB = np.asarray(increments, dtype=float)
    if dB.shape != X.shape:
        raise ValueError("one increment per particle is required")
    return ParticleEnsemble(_step_rank(X, coeffs, dt, dB), ensemble.time + dt)


def step_surrogate(ensemble, coeffs, R, dt, increments):
    """One Euler-Maruyama step of the surrogate system driven by ``R``."""
    X = _positions(ensemble)
    if ensemble.time + dt > R.T + 1e-9 * max(1.0, R.T):
        raise DomainError(f"R covers [0, {R.T}] but the step ends at {ensemble.time + dt}")
    dB = np.asarray(increments, dtype=float)
    if dB.shape != X.shape:
        raise ValueError("one increment per particle is required")
    return ParticleEnsemble(_step_limit(X, ensemble.time, coeffs, R, dt, dB), ensemble.time + dt)


def n_steps(T, dt):
    if T == 0:
        return 0
    k = int(round(T / dt))
    if k < 1 or abs(k * dt - T) > 1e-9 * max(1.0, T):
        raise PreconditionError(f"dt={dt} does not divide T={T}")
    return k


def iterate_coupled(X0, coeffs, R, dt, increments, checksums=None):
    """Yield ``(step, time, X, Xbar)`` for step 0 (initial) through the last step.

    ``increments`` has shape ``(steps,) + X0.shape`` and holds ``N(0, dt)``
    draws.  Both systems consume ``increments[k]`` at step ``k``; when a dict
    ``checksums`` is supplied, running SHA-256 digests of the arrays each system
    consumed are stored under ``"interacting"`` and ``"surrogate"``.
    """
    X = np.array(X0, dtype=float)
    Xb = X.copy()
    hi, hs = hashlib.sha256(), hashlib.sha256()
    if R is not None and increments.shape[0] * dt > R.T + 1e-9 * max(1.0, R.T):
        raise DomainError("solution grid does not cover the simulation horizon")
    yield 0, 0.0, X, Xb
    for k in range(increments.shape[0]):
        dB = increments[k]
        t = k * dt
        hi.update(np.ascontiguousarray(dB).tobytes())
        X = _step_rank(X, coeffs, dt, dB)
        if R is None:
            Xb = Xb + coeffs.b(0.0) * dt + coeffs.sigma(0.0) * dB
        else:
            hs.update(np.ascontiguousarray(dB).tobytes())
            Xb = _step_limit(Xb, t, coeffs, R, dt, dB)
        if checksums is not None:
            checksums["interacting"] = hi.hexdigest()
            checksums["surrogate"] = hs.hexdigest()
        yield k + 1, (k + 1) * dt, X, Xb


def draw_replication(law, n, nsteps, dt, stream):
    """Initial sample and increments for one replication, in a fixed draw order."""
    X0 = sample_iid(law, n, stream)
    dB = stream.standard_normal((nsteps, n)) * np.sqrt(dt)
    return X0, dB


@dataclass
class CoupledPaths:
    """Snapshots of both systems at the observation times."""

    times: np.ndarray
    interacting: np.ndarray
    surrogate: np.ndarray
    dt: float
    increments_seed: dict
    increments_checksum: str
    consumed_checksums: dict = field(default_factory=dict)
    increments: np.ndarray = None

    def ensemble(self, k, which="interacting"):
        arr = self.interacting if which == "interacting" else self.surrogate
        return ParticleEnsemble(arr[k], float(self.times[k]))


def simulate_coupled(law, coeffs, R, n, T, dt, stream, observe_every=1,
                     retain_increments=False, seed_record=None, initial=None, increments=None):
    """Advance both systems from a shared i.i.d. sample to time ``T``.

    The stream is consumed in the order: ``n`` uniforms for the initial sample,
    then ``steps x n`` standard normals.  ``initial`` and ``increments`` may be
    supplied instead (e.g. refined increments for coupled refinement studies).
    """
    steps = n_steps(T, dt)
    if initial is None or increments is None:
        X0, dB = draw_replication(law, n, steps, dt, stream)
        initial = X0 if initial is None else initial
        increments = dB if increments is None else increments
    increments = np.asarray(increments, dtype=float)
    if increments.shape[0] != steps:
        raise PreconditionError("increments do not match the number of steps")
    digest = hashlib.sha256(np.ascontiguousarray(increments).tobytes()).hexdigest()
    sums = {}
    times, xs, xbs = [], [], []
    for k, t, X, Xb in iterate_coupled(initial, coeffs, R, dt, increments, sums):
        if k % observe_every == 0 or k == steps:
            times.append(t)
            xs.append(X.copy())
            xbs.append(Xb.copy())
    return CoupledPaths(
        times=np.array(times), interacting=np.array(xs), surrogate=np.array(xbs), dt=dt,
        increments_seed=dict(seed_record or {}), increments_checksum=digest,
        consumed_checksums=sums, increments=increments if retain_increments else None,
    )
