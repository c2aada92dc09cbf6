"""
The nonlocal generator and the weak Fokker-Planck equation
==========================================================

For ``f(y) = cos(z.y)`` the generator of the Cauchy-type noise is
``-c_L |z| f``.  The time derivative of ``E f(X_t)`` is compared with the
expected generator along simulated paths.
"""
import math

import numpy as np

from subsde import (
    cosine_wave,
    fokker_planck_residual,
    gaussian_bump,
    generator_apply,
    make_stable_spec,
    pendulum,
    stable_calibration,
    zero_drift,
)

spec = make_stable_spec(0.5, 1.0)
alpha, c_L = stable_calibration(spec)

for r in (0.5, 1.0, 2.0):
    z = np.array([r, 0.0])
    val = generator_apply(zero_drift(2), spec, cosine_wave(z), np.zeros(2))
    print(f"|z| = {r}: generator {val:.10f}, closed form {-c_L * r:.10f}")

# moderate sample sizes keep this quick; the acceptance run uses 10**5 paths
z = np.array([0.25, 0.0])
res = fokker_planck_residual(zero_drift(2), spec, cosine_wave(z), np.zeros(2), 1.0, 0.01, N=5000, seed=4, inner=16)
print(f"zero drift: d/dt E f = {res.lhs:.4f}, E Lf = {res.rhs:.4f}, exact {-c_L * 0.25 * math.exp(-c_L * 0.25):.4f}")
print(f"  residual {res.residual:.4f} within budget {res.budget:.4f}: {res.passed}")

bump = gaussian_bump([0.5, 0.3], 0.5)
res = fokker_planck_residual(pendulum(), spec, bump, np.array([0.5, 0.0]), 0.5, 0.01, N=5000, seed=5, inner=16)
print(f"pendulum: residual {res.residual:.4f} within budget {res.budget:.4f}: {res.passed}")
