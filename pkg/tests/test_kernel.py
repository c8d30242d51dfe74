import dataclasses

import numpy as np
import pytest
from scipy import special

from rankflux import coefficients as C
from rankflux import initial, kernel as K, pme
from rankflux.errors import CacheError, CFLViolation, DomainError, DomainTooSmallError, PreconditionError


def const_grid(c, s0, dx, lo=-8.0, hi=8.0, T=1.0):
    """Closed-form limit for constant coefficients; the time step is fine enough for the kernel."""
    co = C.CoefficientPair(C.constant(c), C.constant(s0))
    nt = int(np.ceil(T / pme.cfl_bound(C.antiderivatives(co), dx) / 100)) * 100
    x = pme.uniform_grid(lo, hi, dx)
    F = lambda t, xs: special.ndtr((xs - c * t) / np.sqrt(1 + s0 ** 2 * t))
    return co, pme.SolutionGrid.from_function(F, x, np.linspace(0, T, nt + 1))


@pytest.fixture(scope="module")
def drifting():
    co, R = const_grid(0.5, 1.2, 0.05)
    return co, R, K.kernel_forward(R, co, 0.0, 0.3)


def reliable_error(slice_, c, s0):
    tau = slice_.t_grid - slice_.s
    ok = tau >= slice_.reliable_lag()
    g = K.gaussian_kernel(slice_.x_grid[None], slice_.y, tau[ok][:, None], c, s0)
    return np.max(np.max(np.abs(slice_.values[ok] - g), axis=1) / np.max(g, axis=1))


def test_gaussian_closed_form(drifting):
    _, _, sl = drifting
    assert reliable_error(sl, 0.5, 1.2) <= 0.02


def test_slice_starts_one_lag_after_source(drifting):
    co, R, sl = drifting
    assert sl.t_grid[0] == pytest.approx(sl.s + sl.lag)
    assert sl.mollifier_width == pytest.approx(1.2 * np.sqrt(sl.lag))
    assert sl.mollifier_width >= 2 * R.dx * (1 - 1e-9)
    assert sl.row(1.0) is not None
    with pytest.raises(DomainError):
        sl.row(0.5 * sl.lag)


def test_first_step_variance(drifting):
    _, R, sl = drifting
    expected = sl.mollifier_width ** 2 + 1.2 ** 2 * R.dt
    assert sl.variance(1) == pytest.approx(expected, rel=0.2)


def test_symmetry_driftless():
    co, R = const_grid(0.0, 1.0, 0.05)
    sl = K.kernel_forward(R, co, 0.0, 0.0)
    assert np.max(np.abs(sl.values - sl.values[:, ::-1])) <= 1e-6


def test_nonnegative_and_mass_conserved(drifting):
    _, _, sl = drifting
    assert np.all(sl.values >= 0.0)
    duration = sl.t_grid[-1] - sl.t_grid[0]
    assert np.max(np.abs(sl.mass() + sl.leaked - 1.0)) <= 1e-12
    assert sl.leaked[-1] <= 1e-3 * duration


def test_nonconstant_coefficients_mass(R_lin, lin_coeffs):
    sl = K.kernel_forward(R_lin, lin_coeffs, 0.2, -0.5)
    assert np.all(sl.values >= 0.0)
    assert np.max(sl.leaked) < 1e-6


def test_gaussian_bounds_constant():
    co, R = const_grid(0.0, 1.0, 0.05)
    cl, cu, ok = K.check_gaussian_bounds(K.kernel_forward(R, co, 0.0, 0.0), 1.0)
    assert ok and max(cl, cu) <= 3.0
    # exact Gaussian: the lower constant approaches sqrt(2 pi) and the upper stays below it
    assert cl == pytest.approx(np.sqrt(2 * np.pi), rel=0.01) and cu <= np.sqrt(2 * np.pi)


def test_gaussian_bounds_fail_on_negative_value():
    co, R = const_grid(0.0, 1.0, 0.1)
    sl = K.kernel_forward(R, co, 0.0, 0.0)
    bad = sl.values.copy()
    bad[-1, np.argmin(np.abs(sl.x_grid - 0.5))] = -1e-3
    assert K.check_gaussian_bounds(dataclasses.replace(sl, values=bad), 1.0)[2] is False


def test_gaussian_bound_constants_grow_with_window():
    co, R = const_grid(0.0, 1.0, 0.1, lo=-14.0, hi=14.0)
    sl = K.kernel_forward(R, co, 0.0, 0.0)
    narrow = K.check_gaussian_bounds(sl, 1.0, window=4.0)
    wide = K.check_gaussian_bounds(sl, 1.0, window=8.0)
    assert wide[2] and wide[0] >= narrow[0] and wide[1] >= narrow[1]


def test_bound_constant_fit_matches_definition(gen):
    tau, d2 = gen.uniform(0.1, 1, 50), gen.uniform(0, 4, 50)
    p = gen.uniform(1e-4, 2, 50)
    lo, up = K.fit_bound_constants(tau, d2, p)
    for C_, side in ((lo, "lo"), (up, "up")):
        tight = C_ > 1.0
        if side == "lo":
            val = np.exp(-C_ * d2 / tau) / (C_ * np.sqrt(tau))
        else:
            val = C_ * np.exp(-d2 / (C_ * tau)) / np.sqrt(tau)
        np.testing.assert_allclose(val[tight], p[tight], rtol=1e-9)


def test_chapman_kolmogorov_constant():
    res = []
    for dx in (0.1, 0.05):
        co, R = const_grid(0.5, 1.2, dx)
        res.append(K.chapman_kolmogorov_residual(R, co, 0.0, 0.3, 0.4, 1.0, relative=True))
    assert res[1] <= 0.03 and res[1] < res[0]


def test_chapman_kolmogorov_degenerate_midpoint(drifting):
    co, R, sl = drifting
    res = K.chapman_kolmogorov_residual(R, co, 0.0, 0.3, 0.0, 1.0)
    assert res <= sl.mollification_error_bound(sl.t_grid.size - 1)


def test_chapman_kolmogorov_nonconstant(R_lin, lin_coeffs):
    res = K.chapman_kolmogorov_residual(R_lin, lin_coeffs, 0.0, 0.0, 0.5, 1.0, relative=True)
    assert res <= 0.03


def test_chapman_kolmogorov_order_checked(drifting):
    co, R, _ = drifting
    with pytest.raises(PreconditionError):
        K.chapman_kolmogorov_residual(R, co, 0.5, 0.0, 0.4, 1.0)


def test_transport_identity(R_lin, lin_coeffs, drifting):
    co, R, _ = drifting
    assert K.transport_identity_error(R, co, 0.0, 1.0) <= 0.02
    assert K.transport_identity_error(R_lin, lin_coeffs, 0.0, 0.8) <= 0.02


def test_leakage_raises():
    co, R = const_grid(0.0, 1.0, 0.05, lo=-3.0, hi=3.0)
    with pytest.raises(DomainTooSmallError):
        K.kernel_forward(R, co, 0.0, 2.0)
    sl = K.kernel_forward(R, co, 0.0, 2.0, check_leak=False)
    assert sl.leaked[-1] > 0.1


def test_source_preconditions(drifting):
    co, R, _ = drifting
    with pytest.raises(DomainError):
        K.kernel_forward(R, co, 0.0, 9.0)
    with pytest.raises(DomainError):
        K.kernel_forward(R, co, 0.00001, 0.0)
    with pytest.raises(PreconditionError):
        K.kernel_forward(R, co, R.T, 0.0)


def test_cfl_check(R_const, const_coeffs):
    assert K.check_cfl(R_const, const_coeffs) >= R_const.dt * (1 - 1e-9)
    coarse = pme.SolutionGrid.from_function(lambda t, x: special.ndtr(x), R_const.x, np.linspace(0, 1, 11))
    with pytest.raises(CFLViolation):
        K.kernel_forward(coarse, const_coeffs, 0.0, 0.0)


def test_batch_agrees_with_single(drifting):
    co, R, sl = drifting
    vals, lags = K.kernel_batch(R, co, 0.0, [0.3, -1.0], [0.5, 1.0])
    np.testing.assert_allclose(vals[0, 1], sl.row(1.0), atol=1e-14)
    assert lags[0] == pytest.approx(sl.lag)
    early, _ = K.kernel_batch(R, co, 0.0, [0.0], [R.t[1]])
    assert np.all(np.isnan(early))


def test_family_roundtrip_and_lookup(tmp_path, drifting):
    co, R, sl = drifting
    fam = K.kernel_family(R, co, [0.0, 0.5], [0.3], [0.5, 1.0], x_targets=R.x[::20])
    np.testing.assert_allclose(fam.values[0, 0, 1], sl.row(1.0)[::20], atol=1e-14)
    assert np.all(np.isnan(fam.values[1, 0, 0]))
    fam.save(tmp_path / "k.bin")
    back = K.KernelFamily.load(tmp_path / "k.bin")
    np.testing.assert_array_equal(np.isnan(back.values), np.isnan(fam.values))
    np.testing.assert_array_equal(np.nan_to_num(back.values), np.nan_to_num(fam.values))
    with pytest.raises(CacheError):
        back.lookup(1, 0, 0)
    with pytest.raises(PreconditionError):
        K.kernel_family(R, co, [0.0], [0.3], [1.0], x_targets=[0.0123])


def test_cache_key_content_addressed(drifting):
    co, R, _ = drifting
    law = initial.normal()
    k1 = K.cache_key(co, law, R, 0.1)
    assert k1 == K.cache_key(co, law, R, 0.1)
    assert k1 != K.cache_key(co, law, R, 0.2)
    assert k1 != K.cache_key(C.CoefficientPair(C.constant(0.0), C.constant(1.2)), law, R, 0.1)
