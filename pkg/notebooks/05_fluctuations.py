"""Fluctuation field: mild solution, exact covariance and the particle CLT.

Run with ``python notebooks/05_fluctuations.py`` (about a minute).
"""

import numpy as np

from rankflux import coefficients as C
from rankflux import experiments as E
from rankflux import initial, pme, rng, spde, testfunctions as tf

co = C.CoefficientPair(C.constant(0.0), C.constant(1.0))
law = initial.normal()
R = pme.solve_pme(law, C.antiderivatives(co), (-8.0, 8.0), 0.5, 0.05, 6.25e-4)

# Kernel-convolution field on a (time, space) cell grid, driven by a
# Brownian bridge at t=0 and by white noise on the cells.
k = spde.mild_kernels(R, co, 0.5, 0.025, 0.1, (-4.0, 4.0))
ops = (spde.noise_operator(R, co, k), spde.initial_operator(R, co, k))
g = rng.stream(3, "field")
bridge = initial.sample_bridge(law, k.x, g, size=500)
field = spde.simulate_mild(R, co, k, bridge, stream=g, operators=ops)
j = int(np.argmin(np.abs(k.x)))
emp = field.values[:, -1, j].var(ddof=1)
exact = spde.covariance_exact(0.5, 0.0, 0.5, 0.0, R, co, law)
print(f"Var u(0.5, 0): Monte Carlo {emp:.4f} (500 fields), exact {exact:.4f}")

# The field satisfies the weak identity against a test function up to
# discretization error.
gamma = tf.bump(0.2, 1.5, 1.0, 0.5)
nz = spde.draw_noise(rng.stream(4, "id"), k, 10)
b = initial.sample_bridge(law, k.x, rng.stream(5, "id"), size=10)
f = spde.simulate_mild(R, co, k, b, noise=nz, operators=ops)
print("mild identity RMS residual", np.sqrt(np.mean(spde.mild_identity_residual(f, gamma, R, co, nz) ** 2)))

# Particle CLT: sqrt(n) times tested fluctuations is approximately Gaussian
# with the variance of the limit field.
specs = [E.ObservableSpec(gamma, "G", 0.0, "G_t0"), E.ObservableSpec(gamma, "G", 0.5, "G_t0.5"),
         E.ObservableSpec(gamma, "H", 0.5, "H_t0.5")]
rep, V = E.clt_experiment(law, co, R, specs, 1000, 500, 2026, 0.01)
for name, v, ex, p in zip(rep.table["observable"], rep.table["variance"], rep.table["exact_variance"],
                          rep.table["normality_p"]):
    print(f"{name}: variance {v:.4f} vs {ex:.4f}, normality p = {p:.3f}")
