import numpy as np
import pytest
from scipy import stats

from rankflux import initial
from rankflux.errors import ConfigurationError, DomainError


def test_uniform_quantile_is_identity():
    assert initial.uniform().quantile(0.25) == 0.25


def test_normal_median_is_zero():
    assert initial.normal().quantile(0.5) == 0.0


def test_quantile_rejects_endpoints(gen):
    with pytest.raises(DomainError):
        initial._check_u([0.0, 0.5])


@pytest.mark.parametrize("name, ref", [
    ("normal", stats.norm()),
    ("logistic", stats.logistic()),
    ("truncated_normal", stats.truncnorm(-2, 2)),
])
def test_law_matches_scipy(name, ref):
    law = initial.make_law(name)
    x = np.linspace(-1.9, 1.9, 41)
    np.testing.assert_allclose(law.cdf(x), ref.cdf(x), atol=1e-14)
    np.testing.assert_allclose(law.density(x), ref.pdf(x), rtol=1e-12)
    u = np.linspace(0.01, 0.99, 41)
    np.testing.assert_allclose(law.quantile(u), ref.ppf(u), atol=1e-12)


def test_make_law_errors():
    with pytest.raises(ConfigurationError):
        initial.make_law("cauchy")
    with pytest.raises(ConfigurationError):
        initial.make_law("normal", sigma=2.0)


def test_moment_of_normal():
    assert initial.normal().moment(2) == pytest.approx(1.0, abs=1e-8)
    assert initial.uniform(0, 2).moment(1) == pytest.approx(1.0, abs=1e-6)


def test_sample_normal_moments(gen):
    x = initial.sample_iid(initial.normal(), 100_000, gen)
    assert abs(x.mean()) < 3 / np.sqrt(x.size)
    assert x.var() == pytest.approx(1.0, rel=0.05)


def test_sample_is_deterministic_and_batched():
    a = initial.sample_iid(initial.normal(), (3, 5), np.random.default_rng(1))
    b = initial.sample_iid(initial.normal(), (3, 5), np.random.default_rng(1))
    assert a.shape == (3, 5) and np.array_equal(a, b)


def test_bridge_pinned_where_cdf_degenerate(gen):
    law = initial.uniform(0.0, 1.0)
    grid = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    v = initial.sample_bridge(law, grid, gen, size=50).values
    assert np.all(v[:, [0, 1, 3, 4]] == 0.0)
    assert np.std(v[:, 2]) > 0


def test_bridge_variance_at_median(gen):
    v = initial.sample_bridge(initial.normal(), np.array([0.0]), gen, size=10_000).values[:, 0]
    assert np.var(v) == pytest.approx(0.25, rel=0.05)


def test_bridge_covariance(gen):
    law = initial.uniform()
    v = initial.sample_bridge(law, np.array([0.3, 0.7]), gen, size=10_000).values
    assert np.cov(v.T)[0, 1] == pytest.approx(0.09, rel=0.1)


def test_bridge_full_covariance_matrix(gen):
    law = initial.normal()
    grid = np.linspace(-2, 2, 9)
    v = initial.sample_bridge(law, grid, gen, size=40_000).values
    u = law.cdf(grid)
    exact = np.minimum.outer(u, u) - np.outer(u, u)
    assert np.max(np.abs(np.cov(v.T) - exact)) < 0.01


def test_bridge_flat_cdf_repeats_value(gen):
    law = initial.uniform(0.0, 1.0)
    v = initial.sample_bridge(law, np.array([0.2, 1.5, 1.7]), gen, size=4).values
    assert np.all(v[:, 1] == 0.0) and np.all(v[:, 2] == 0.0)


def test_bridge_rejects_unsorted_grid(gen):
    with pytest.raises(ValueError):
        initial.sample_bridge(initial.normal(), np.array([0.0, -1.0]), gen)
