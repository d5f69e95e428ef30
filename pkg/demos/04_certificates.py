"""
Stability certificate and input bound
=====================================

The certificate b = M W^k/(k+1)! + l c (1 - alpha_min) < 1 promises
|x_t| <= W/(1 - b).  On x+ = 0.6 sin x + u + w it holds for small W, but
at W = 1.5 with alpha = 1 the states leave the W-ball, where the linear
remainder estimate behind b no longer applies, and the promised bound is
exceeded.
"""

import numpy as np

from polysls import (DisturbanceSpec, SlsPolicy, check_iss, compute_l_c, cost_bound_u1, estimate_deriv_bound,
                     gen_disturbances, simulate, synthesize, taylor_expand)
from polysls.systems import sine_plant

plant = sine_plant(0.6)
M = estimate_deriv_bound(plant, 3.0, 1)
ctl = synthesize(taylor_expand(plant, 1, M=M), T=1)

for W, alpha in ((0.5, 0.8), (1.0, 1.0), (1.5, 1.0), (3.0, 0.1)):
    l, c = compute_l_c(ctl, W)
    cert = check_iss(M, W, 1, l, c, alpha)
    d = gen_disturbances(DisturbanceSpec("sign_random", W, 10_000, 1, seed=0))
    sup = np.abs(simulate(plant, SlsPolicy(ctl, alpha), d).states).max()
    print(f"W={W} alpha={alpha}: b={cert.b:.3f} certified={cert.satisfied} "
          f"bound={cert.state_bound:.3f} observed sup={sup:.3f}")

# input bound of the unit-gain controller; 13/36 for M=1, n=1, h=1, k=2, W=1/2
print("U1 fixture:", cost_bound_u1(1.0, 0.5, 2, 1, 1.0).U1, "vs", 13 / 36)
