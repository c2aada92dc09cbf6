"""
Jacobian flows, Malliavin covariance and bracket conditions
===========================================================

The pendulum ``x' = v, v' = sin x`` with noise on the velocity only.  The
noise does not act on ``x`` directly; the first bracket carries it there,
which is what makes the Malliavin covariance invertible.
"""
import numpy as np

from subsde import (
    bracket_hierarchy,
    check_Hn,
    covariance,
    directional_energy,
    integrate,
    make_stable_spec,
    pendulum,
    sample_path,
    small_ball_profile,
    synthesize_noise,
    uniform_h1_constant,
    zero_drift,
)

spec = make_stable_spec(0.5, 1.0)
model = pendulum()

# rank conditions
x = np.array([0.5, 0.0])
print("rank of [A]:", check_Hn(model, x, 0).rank, " rank of [A, B_1 A]:", check_Hn(model, x, 1).rank)
print("B_2 at x:\n", bracket_hierarchy(model, x, 2).matrices[1])
pts = np.random.default_rng(0).uniform(-np.pi, np.pi, (100, 2))
print("uniform first-bracket constant:", uniform_h1_constant(model, pts))

# one path: flow identities and covariance
rng = np.random.default_rng(1)
path = sample_path(spec, 1.0, 1e-3, rng)
bundle = integrate(model, synthesize_noise(path, 2, None, rng), x)
print(f"max |JK - I| = {bundle.inverse_residual().max():.2e}, Liouville residual = {bundle.liouville_residual().max():.2e}")
cov = covariance(bundle, path)
print("Malliavin covariance eigenvalues:", cov.eigenvalues())
print("energy in the position direction:", directional_energy(bundle, path, [1.0, 0.0]))

# the same direction is dead without drift
flat = zero_drift(2, np.diag([0.0, 1.0]))
bundle0 = integrate(flat, synthesize_noise(path, 2, None, np.random.default_rng(2)), x)
print("energy without drift:", directional_energy(bundle0, path, [1.0, 0.0]))

# small-ball probabilities decay faster than linearly
prof = small_ball_profile(model, spec, x, 1.0, np.eye(2), [0.2, 0.3, 0.45, 0.65, 1.0], N=10_000, seed=3)
print("log-log slopes:", prof.slopes)
