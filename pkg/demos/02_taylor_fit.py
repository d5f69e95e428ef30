"""
Fitting a polynomial model to smooth dynamics
=============================================

The point mass is expanded around its hover equilibrium, and a derivative
bound M is estimated for the remainder.
"""

import numpy as np

from polysls import RemainderModel, estimate_deriv_bound, lagrange_remainder, poly_eval, taylor_expand
from polysls.systems import point_mass

plant = point_mass()
k, radius = 3, 0.5
M = estimate_deriv_bound(plant, radius, k)
fit = taylor_expand(plant, k, M=M)

for j, H in enumerate(fit.H, start=1):
    print(f"H_{j}: shape {H.shape}, max |entry| {np.abs(H).max():.4f}")

# the fitted model tracks the plant inside the ball and the Lagrange bound covers the gap
pts = np.random.default_rng(0).uniform(-radius, radius, size=(2000, 2))
err = np.max(np.abs(plant(pts) - poly_eval(fit, pts)))
bound = lagrange_remainder(RemainderModel(M, k, radius))
print(f"M = {M:.4f}; max model error {err:.2e}; remainder bound {bound:.2e}")
