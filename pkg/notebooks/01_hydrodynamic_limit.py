"""Hydrodynamic limit: solving for the limiting CDF ``R(t, x)``.

Run with ``python notebooks/01_hydrodynamic_limit.py``.
"""

import numpy as np
from scipy import special

from rankflux import coefficients as C
from rankflux import initial, pme, testfunctions as tf

# Coefficients are functions of the rank quantile a in [0, 1]; the solver
# works with their antiderivatives B (drift) and Sigma (half squared diffusion).
co = C.CoefficientPair(C.constant(0.0), C.constant(1.0))
anti = C.antiderivatives(co)
law = initial.normal()

# The domain is chosen so the initial law and its spread up to T fit inside;
# dt=None picks the largest stable step.
domain = pme.default_domain(law, co, 1.0, dx=0.02)
R = pme.solve_pme(law, anti, domain, 1.0, 0.02)
print("domain", domain, "steps", R.t.size - 1, "dt", R.dt, "CFL bound", pme.cfl_bound(anti, R.dx))

# Without drift and with unit diffusion each particle is a Brownian motion,
# so R(t, x) = Phi(x / sqrt(1 + t)).
exact = special.ndtr(R.x[None] / np.sqrt(1 + R.t[:, None]))
print("sup error vs heat solution:", np.max(np.abs(R.R - exact)))

# A rank-dependent drift: b(a) = a pushes leaders faster than laggards, so the
# law spreads to the right.
lin = C.CoefficientPair(C.linear(), C.constant(1.0))
Rl = pme.solve_pme(law, C.antiderivatives(lin), pme.default_domain(law, lin, 1.0, dx=0.02), 1.0, 0.02)
for t in (0.0, 0.5, 1.0):
    k = int(np.argmin(np.abs(Rl.t - t)))
    med = np.interp(0.5, Rl.R[k], Rl.x)
    print(f"t={Rl.t[k]:.4f}: median {med:+.4f}, E|X| {Rl.moment(k, 1):.4f}")

# The weak-form residual against a smooth window vanishes as dx shrinks.
zeta = tf.sine_window(-2.0, 2.0, 0.5)
for dx in (0.08, 0.04, 0.02):
    S = pme.solve_pme(law, anti, (-8.0, 8.0), 1.0, dx)
    print(f"dx={dx}: weak residual {pme.weak_form_residual(S, anti, zeta, (0, 1, -2, 2)):.2e}")
