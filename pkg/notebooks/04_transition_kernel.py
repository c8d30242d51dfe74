"""Transition density of the surrogate diffusion.

Run with ``python notebooks/04_transition_kernel.py``.
"""

import numpy as np

from rankflux import coefficients as C
from rankflux import experiments as E
from rankflux import initial, kernel as K, pme, rng

c, s0 = 0.5, 1.2
co = C.CoefficientPair(C.constant(c), C.constant(s0))
law = initial.normal()
R = pme.solve_pme(law, C.antiderivatives(co), (-8.0, 8.0), 1.0, 0.05, step_multiple=100)

# The forward solve starts from a narrow Gaussian source; the slice begins
# one mollification lag after s, when the source has matched the kernel.
sl = K.kernel_forward(R, co, 0.0, 0.3)
print("mollifier width", sl.mollifier_width, "lag", sl.lag, "reliable from", sl.reliable_lag())
for t in (0.25, 0.5, 1.0):
    row = sl.row(t)
    g = K.gaussian_kernel(sl.x_grid, 0.3, t, c, s0)
    print(f"t={t}: mass {row.sum() * sl.dx:.6f}, sup rel error {np.max(np.abs(row - g)) / g.max():.2e}")

Cl, Cu, ok = K.check_gaussian_bounds(sl, 1.0)
print("two-sided Gaussian bound constants", round(Cl, 3), round(Cu, 3), "pass", ok)
print("Chapman-Kolmogorov relative residual",
      K.chapman_kolmogorov_residual(R, co, 0.0, 0.3, 0.4, 1.0, relative=True))
print("transport identity error", K.transport_identity_error(R, co, 0.0, 1.0))

# Monte Carlo cross-check: a kernel density estimate of simulated surrogate
# paths, with the discrepancy split into smoothing bias and sampling noise.
chk = E.mc_kernel_crosscheck(R, co, 0.0, 0.0, 0.5, 20000, rng.stream(1, "mc"), bandwidth=0.15)
print(f"discrepancy {chk.discrepancy:.4f} (bias {chk.bias:.4f}, MC {chk.mc_component:.4f}), "
      f"budget {chk.budget():.4f}, leakage {chk.leakage}")
