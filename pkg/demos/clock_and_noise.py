"""
Random clocks and the noise they drive
======================================

A stable subordinator of index 1/2 is sampled with jumps below a cut level
replaced by drift, and its terminal value is compared with the closed-form
distribution.  Brownian motion run on that clock is then compared with the
symmetric Cauchy law it should produce.
"""
import math

import numpy as np

from subsde import (
    SampleEnsemble,
    empirical_cf,
    make_stable_spec,
    sample_path,
    stable_calibration,
    synthesize_noise,
)
from subsde.malliavin import stable_half_cdf
from subsde.subordinator import sample_clock_totals

spec = make_stable_spec(0.5, 1.0)
alpha, c_L = stable_calibration(spec)
print(f"index {alpha}, scale {c_L:.6f} (sqrt(2 pi) = {math.sqrt(2 * math.pi):.6f})")

# one clock path and its noise
rng = np.random.default_rng(0)
path = sample_path(spec, 1.0, 1e-3, rng)
noise = synthesize_noise(path, 2, 1 / 64, rng)
print(f"{path.jump_sizes.size} jumps above the cut, S_1 = {float(path.value(1.0)):.4f}")
print(f"{noise.grid.size - 1} noise cells, L_1 = {noise.total()}")

# terminal clock values against the closed form
S = sample_clock_totals(spec, 1.0, 50_000, np.random.default_rng(1), 1e-4)
for x in (0.5, 1.0, 2.0, 5.0):
    print(f"P(S_1 <= {x}): empirical {np.mean(S <= x):.4f}, exact {float(stable_half_cdf(spec, 1.0, x)):.4f}")

# L_1 = W(S_1) has characteristic function exp(-c_L |z|)
L = np.sqrt(S)[:, None] * np.random.default_rng(2).standard_normal((S.size, 2))
for r in (0.25, 0.5, 1.0):
    v, se = empirical_cf(SampleEnsemble(L), np.array([r, 0.0]))
    print(f"|z| = {r}: empirical CF {v.real:.4f} +- {se:.4f}, exact {math.exp(-c_L * r):.4f}")
