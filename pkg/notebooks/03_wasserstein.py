"""One-dimensional Wasserstein distances and the uniform-sample rate.

Run with ``python notebooks/03_wasserstein.py``.
"""

import numpy as np

from rankflux import initial, rng
from rankflux import wasserstein as W

g = np.random.default_rng(0)
x, y = g.normal(size=5), g.normal(1.0, 2.0, size=3)
mu, nu = W.Measure1D.empirical(x), W.Measure1D.empirical(y)

# W_1 has two routes: the L1 distance of CDFs and of quantile functions.
print("W_1 (cdf)", W.w1_cdf(mu, nu), " W_1 (quantile)", W.wp_quantile(mu, nu, 1))
print("W_2", W.wp_quantile(mu, nu, 2), " W_3", W.wp_quantile(mu, nu, 3))

# Empirical against analytic laws are integrated in the quantile variable.
std = W.Measure1D.from_law(initial.normal())
shift = W.Measure1D.from_law(initial.normal(0.7))
print("W_2(N(0,1), N(0.7,1)) =", W.wp_quantile(std, shift, 2), "(exact 0.7)")
big = W.Measure1D.empirical(g.normal(size=5000))
print("W_2(empirical n=5000, N(0,1)) =", W.wp_quantile(big, std, 2))

# E[W_2^2]^(1/2) for n uniforms decays like n^(-1/2).
table = W.uniform_rate_experiment(2, [100, 1000, 10000], 500, rng.stream(2026, "wasserstein"))
for n, e, s in zip(table.n, table.estimate, table.stderr):
    print(f"n={n:6d}: {e:.5f} +/- {s:.5f}")
print("slope", round(table.slope, 3))
