import numpy as np
import pytest
from scipy import integrate, special

from rankflux import coefficients as C
from rankflux import experiments as E
from rankflux import initial, particles as P, pme, rng, testfunctions as tf
from rankflux.errors import ConfigurationError, DomainError, PreconditionError

GAMMA = tf.bump(0.3, 1.5, 1.0, 0.5)


def uniform_grid_R(T=0.0):
    x = pme.uniform_grid(-1.0, 2.0, 0.01)
    law = initial.uniform()
    return pme.SolutionGrid.from_function(lambda t, xs: law.cdf(xs), x, np.linspace(0, max(T, 0.01), 2))


# chaos ---------------------------------------------------------------------

def test_chaos_constant_coefficients_is_zero(R_const):
    co = C.CoefficientPair(C.constant(0.4), C.constant(1.0))
    rep = E.chaos_rate(initial.normal(), co, R_const, 2, [5, 10], 0.5, 0.05, 6, 1)
    assert rep.table["particle"] == [0.0, 0.0] and rep.table["wasserstein"] == [0.0, 0.0]
    assert rep.extra["pathwise_fraction"] == [1.0, 1.0]


def test_chaos_report_and_pathwise_inequality(R_lin, lin_coeffs):
    args = (initial.normal(), lin_coeffs, R_lin, 2, [10, 40], 0.5, 0.01, 30, 5)
    rep = E.chaos_rate(*args, bootstrap=50)
    assert rep.extra["pathwise_fraction"] == [1.0, 1.0]
    assert all(w <= p for w, p in zip(rep.table["wasserstein"], rep.table["particle"]))
    assert rep.table["particle"][1] < rep.table["particle"][0]
    lo, hi = rep.intervals["particle_slope"]
    assert lo <= rep.slopes["particle"] <= hi
    threaded = E.chaos_rate(*args, bootstrap=50, threads=3)
    assert threaded.to_dict() == rep.to_dict()


def test_chaos_first_particle_matches_direct_simulation(R_lin, lin_coeffs):
    rep = E.chaos_rate(initial.normal(), lin_coeffs, R_lin, 2, [8, 16], 0.2, 0.01, 3, 9, bootstrap=10)
    direct = []
    for r in range(3):
        paths = P.simulate_coupled(initial.normal(), lin_coeffs, R_lin, 8, 0.2, 0.01,
                                   rng.stream(9, "chaos/n=8", r))
        direct.append(np.max((paths.interacting[:, 0] - paths.surrogate[:, 0]) ** 2))
    assert rep.table["first"][0] == pytest.approx(np.mean(direct), rel=1e-12)


# observables ----------------------------------------------------------------

def test_single_particle_observable_closed_form():
    R = uniform_grid_R()
    g = tf.bump(0.5, 0.4)
    for x0 in (0.3, 0.55, 1.5):
        oracle = integrate.quad(lambda x: g(0.0, x) * ((x >= x0) - x), 0.1, 0.9, points=[x0], epsabs=1e-13)[0]
        val = E.compute_observable(E.ObservableSpec(g, "G", 0.0), ([0.0], np.array([[x0]])), R)
        assert val == pytest.approx(oracle, abs=1e-12)


def test_observable_vanishes_when_R_is_the_empirical_cdf(gen):
    X = np.sort(gen.uniform(0.1, 0.9, 20))
    x = pme.uniform_grid(-1.0, 2.0, 1e-4)
    F = lambda t, xs: np.searchsorted(X, xs, side="right") / X.size
    R = pme.SolutionGrid.from_function(F, x, np.array([0.0, 1.0]))
    val = E.compute_observable(E.ObservableSpec(tf.bump(0.5, 0.4), "G", 0.0), ([0.0], X[None]), R)
    assert abs(val) <= np.sqrt(20) * 20 * 1e-4


def test_observable_linear_in_gamma(gen):
    R = uniform_grid_R(1.0)
    X = gen.random((3, 2, 50))
    times = [0.0, 0.5, 1.0]
    g = tf.bump(0.5, 0.4, 1.0, 0.5)
    for kind in ("G", "H"):
        a = E.compute_observable(E.ObservableSpec(g.scaled(0.1), kind, 1.0), (times, X), R)
        b = E.compute_observable(E.ObservableSpec(g.scaled(0.2), kind, 1.0), (times, X), R)
        np.testing.assert_allclose(b, 2 * a, rtol=1e-13)


def test_H_observable_is_trapezoid_of_G(gen):
    R = uniform_grid_R(1.0)
    X = gen.random((3, 40))
    times = [0.0, 0.5, 1.0]
    g = tf.bump(0.5, 0.4, 1.0, 2.0)
    G = [E.compute_observable(E.ObservableSpec(g, "G", t), (times, X), R) for t in times]
    H = E.compute_observable(E.ObservableSpec(g, "H", 1.0), (times, X), R)
    assert H == pytest.approx(0.25 * (G[0] + 2 * G[1] + G[2]), rel=1e-13)
    assert E.compute_observable(E.ObservableSpec(g, "H", 0.0), (times, X), R) == 0.0


def test_observable_errors():
    R = uniform_grid_R()
    with pytest.raises(DomainError):
        E.compute_observable(E.ObservableSpec(tf.bump(1.8, 0.5), "G", 0.0), ([0.0], np.zeros((1, 3))), R)
    with pytest.raises(DomainError):
        E.compute_observable(E.ObservableSpec(GAMMA, "G", 0.3), ([0.0], np.zeros((1, 3))), R)
    with pytest.raises(PreconditionError):
        E.compute_observable(E.ObservableSpec(tf.sine_window(0.0, 1.0), "G", 0.0), ([0.0], np.zeros((1, 3))), R)
    with pytest.raises(ConfigurationError):
        E.ObservableSpec(GAMMA, "F", 0.0)
    with pytest.raises(ConfigurationError):
        E.ObservableSpec(GAMMA, "G", -1.0)
    with pytest.raises(DomainError):
        E.ObservableSpec(GAMMA, "G", 0.0, "g").check_window((-1.0, 1.0))


def bridge_functional_covariance(g1, g2, law, lo=-6.0, hi=6.0, m=3001):
    x = np.linspace(lo, hi, m)
    F = law.cdf(x)
    S = np.minimum.outer(F, F) - np.outer(F, F)
    w = np.full(m, x[1] - x[0])
    w[[0, -1]] *= 0.5
    return (w * g1(0.0, x)) @ S @ (w * g2(0.0, x))


def test_clt_initial_time_bridge_functionals(R_const_spde, const_coeffs, normal_law):
    g1, g2 = tf.bump(-1.0, 0.8), tf.bump(1.0, 0.8)
    specs = [E.ObservableSpec(g1, "G", 0.0, "left"), E.ObservableSpec(g2, "G", 0.0, "right")]
    rep, V = E.clt_experiment(normal_law, const_coeffs, R_const_spde, specs, 2000, 2000, 2026, 0.01)
    exact = rep.extra["exact_covariance"]
    # the limit covariance is assembled on the dx = 0.05 grid of R
    assert exact[0, 0] == pytest.approx(bridge_functional_covariance(g1, g1, normal_law), rel=2e-3)
    assert exact[0, 1] == pytest.approx(bridge_functional_covariance(g1, g2, normal_law), rel=2e-3)
    assert all(0.9 <= r <= 1.1 for r in rep.table["ratio"])
    emp, ex = rep.extra["empirical_correlation"][0, 1], rep.extra["exact_correlation"][0, 1]
    assert abs(emp - ex) <= 0.1
    assert V.shape == (2000, 2)


def test_clt_determinism_across_threads(R_lin_spde, lin_coeffs, normal_law):
    specs = [E.ObservableSpec(GAMMA, "G", 0.1, "g"), E.ObservableSpec(GAMMA, "H", 0.1, "h")]
    a, Va = E.clt_experiment(normal_law, lin_coeffs, R_lin_spde, specs, 50, 30, 4, 0.01)
    b, Vb = E.clt_experiment(normal_law, lin_coeffs, R_lin_spde, specs, 50, 30, 4, 0.01, threads=2)
    assert np.array_equal(Va, Vb) and a.to_dict()["table"] == b.to_dict()["table"]


def test_clt_values_match_direct_simulation(R_lin_spde, lin_coeffs, normal_law):
    spec = E.ObservableSpec(GAMMA, "G", 0.1, "g")
    _, V = E.clt_experiment(normal_law, lin_coeffs, R_lin_spde, [spec], 30, 2, 8, 0.01)
    for r in range(2):
        g = rng.stream(8, "clt/n=30", r)
        X = initial.sample_iid(normal_law, 30, g)
        for _ in range(10):
            X = P.step_interacting(P.ParticleEnsemble(X), lin_coeffs, 0.01,
                                   g.standard_normal(30) * np.sqrt(0.01)).positions
        assert V[r, 0] == pytest.approx(E.compute_observable(spec, ([0.1], X[None]), R_lin_spde), rel=1e-12)


# prelimit identity ------------------------------------------------------------

def run_paths(co, R, n, t, dt, seed, retain=True):
    return P.simulate_coupled(initial.normal(), co, R, n, t, dt, rng.stream(seed, "paths"),
                              retain_increments=retain)


def test_prelimit_zero_gamma(R_lin, lin_coeffs):
    paths = run_paths(lin_coeffs, None, 20, 0.2, 0.01, 1)
    lhs, rhs = E.prelimit_sides(paths, lin_coeffs, C.antiderivatives(lin_coeffs), R_lin, tf.zero(), 0.2)
    assert lhs == 0.0 and rhs == 0.0


def test_prelimit_frozen_stub():
    stub = C.CoefficientPair.degenerate(C.constant(0.0), C.constant(0.0))
    law = initial.uniform()
    R = uniform_grid_R(1.0)
    g = tf.bump(0.5, 0.4, 1.0, 3.0)
    paths = P.simulate_coupled(law, stub, None, 30, 0.5, 0.05, rng.stream(2, "stub"), retain_increments=True)
    lhs, rhs = E.prelimit_sides(paths, stub, C.antiderivatives(stub), R, g, 0.5)
    assert rhs == 0.0
    # the observable change equals the gamma_s integral; both are of order sqrt(n) * rate
    obs0 = E.compute_observable(E.ObservableSpec(g, "G", 0.0), paths, R)
    assert abs(obs0) > 0.01 and abs(lhs) <= 1e-10


def test_prelimit_refinement_decreases(R_lin, lin_coeffs, normal_law):
    anti = C.antiderivatives(lin_coeffs)
    rep = E.prelimit_refinement(normal_law, lin_coeffs, anti, R_lin, GAMMA, 0.5, 100,
                                [0.02, 0.01, 0.005], 8, 7)
    rms = rep.table["rms_residual"]
    assert rms[0] > rms[1] > rms[2] and rep.extra["monotone_within_10pct"]
    assert rep.slopes["rms"] > 0


def test_prelimit_uses_the_same_path_at_every_level(gen):
    dB = gen.standard_normal((8, 3))
    np.testing.assert_allclose(E.coarsen_increments(dB, 4).sum(axis=0), dB.sum(axis=0))
    assert E.coarsen_increments(dB, 2).shape == (4, 3)
    with pytest.raises(PreconditionError):
        E.coarsen_increments(dB, 3)


def test_prelimit_preconditions(R_lin, lin_coeffs):
    anti = C.antiderivatives(lin_coeffs)
    with pytest.raises(ConfigurationError):
        E.prelimit_sides(run_paths(lin_coeffs, None, 5, 0.1, 0.01, 1, retain=False), lin_coeffs, anti,
                         R_lin, GAMMA, 0.1)
    sparse = P.simulate_coupled(initial.normal(), lin_coeffs, None, 5, 0.1, 0.01, rng.stream(1, "p"),
                                observe_every=5, retain_increments=True)
    with pytest.raises(ConfigurationError):
        E.prelimit_sides(sparse, lin_coeffs, anti, R_lin, GAMMA, 0.1)
    with pytest.raises(DomainError):
        E.prelimit_sides(run_paths(lin_coeffs, None, 5, 0.1, 0.01, 1), lin_coeffs, anti, R_lin,
                         tf.bump(8.5, 1.0), 0.1)


def test_correction_term_scaling():
    for c in (0.5, 2.0):
        co = C.CoefficientPair(C.constant(c), C.constant(1.0))
        anti = C.antiderivatives(co)
        for n in (10, 100, 1000):
            Bn, _ = C.discretized_step_functions(co, n)
            # the gap peaks just left of every jump
            r = (np.arange(1, n + 1) - 1e-6) / n
            gap = np.sqrt(n) * np.max(np.abs(Bn(r) - anti.B(r)))
            assert gap == pytest.approx(c / np.sqrt(n), rel=1e-3)
            k = np.arange(n + 1) / n
            assert np.max(np.abs(Bn(k) - anti.B(k))) <= 1e-13


# kernel cross-check ----------------------------------------------------------

def closed_form_grid(lo=-8.0, hi=8.0):
    x = pme.uniform_grid(lo, hi, 0.05)
    return pme.SolutionGrid.from_function(lambda t, xs: special.ndtr(xs / np.sqrt(1 + t)), x,
                                          np.linspace(0, 1, 1001))


def test_crosscheck_within_budget(const_coeffs):
    R = closed_form_grid()
    cc = E.mc_kernel_crosscheck(R, const_coeffs, 0.0, 0.0, 0.5, 40000, rng.stream(1, "kde"))
    assert cc.discrepancy <= cc.budget()
    assert not cc.leakage and cc.bandwidth >= 2 * R.dx


def test_crosscheck_mc_component_halves(const_coeffs):
    R = closed_form_grid()
    comp = {N: np.mean([E.mc_kernel_crosscheck(R, const_coeffs, 0.0, 0.0, 0.5, N, rng.stream(s, "kde"),
                                               bandwidth=0.15, steps=50).mc_component for s in range(8)])
            for N in (5000, 20000)}
    assert 0.35 <= comp[20000] / comp[5000] <= 0.65


def test_crosscheck_flags_leakage(const_coeffs):
    R = pme.SolutionGrid.from_function(lambda t, xs: special.ndtr(xs / np.sqrt(1 + t)),
                                       pme.uniform_grid(-3.0, 3.0, 0.05), np.linspace(0, 1, 1601))
    far = E.mc_kernel_crosscheck(R, const_coeffs, 0.0, 2.0, 1.0, 4000, rng.stream(0, "kde"))
    assert far.leakage and far.escaped_fraction > 0.2
    assert far.kernel_leaked == pytest.approx(far.escaped_fraction, abs=0.05)
    near = E.mc_kernel_crosscheck(R, const_coeffs, 0.0, 0.0, 0.1, 4000, rng.stream(0, "kde"))
    assert not near.leakage


def test_report_serialization(tmp_path):
    rep = E.ExperimentReport("x", "abc", 3, 10, {"n": [1, 2], "v": [0.5, np.float64(0.25)]},
                             slopes={"v": -1.0}, extra={"m": np.eye(2)})
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "r.csv", {"seed": 3})
    assert '"config_hash": "abc"' in (tmp_path / "r.json").read_text()
    assert (tmp_path / "r.csv").read_text().splitlines()[1:] == ["n,v", "1,0.5", "2,0.25"]
