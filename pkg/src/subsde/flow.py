"""State, Jacobian and inverse-Jacobian flows along a driving noise path.

Between noise events the system ``dX = b(X) dt``, ``dJ = grad b(X) J dt``,
``dK = -K grad b(X) dt`` is an ODE and is advanced by classical RK4.  Every
noise increment is attached to the right end of its cell: ``X <- X + A dL``,
while ``J`` and ``K`` are continuous.

All evaluators of an :class:`SdeModel` must be vectorized over leading axes:
``drift`` maps ``(..., d) -> (..., d)``, ``jacobian`` maps ``(..., d) ->
(..., d, d)`` and the optional ``hessian`` maps ``(..., d) -> (..., d, d, d)``
with entry ``[i, j, k] = d_k d_j b^i``.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .noise import DrivingNoisePath


@dataclass(frozen=True)
class SdeModel:
    d: int
    drift: Callable
    jacobian: Callable
    A: np.ndarray
    hessian: Optional[Callable] = None
    lipschitz_bound: float = math.inf
    name: str = "custom"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.shape != (self.d, self.d):
            raise ValueError(f"A must be {self.d}x{self.d}, got {A.shape}")
        object.__setattr__(self, "A", A)
        err = jacobian_consistency(self)
        if err > 1e-5:
            raise ValueError(f"jacobian inconsistent with drift (relative error {err:.2e})")


def jacobian_consistency(model: SdeModel, n_probe: int = 8, h: float = 1e-4, seed: int = 2024) -> float:
    """Max relative error between ``model.jacobian`` and central differences of the drift."""
    x = np.random.default_rng(seed).standard_normal((n_probe, model.d))
    exact = np.asarray(model.jacobian(x), dtype=float)
    fd = np.empty_like(exact)
    for j in range(model.d):
        e = np.zeros(model.d)
        e[j] = h
        fd[..., j] = (np.asarray(model.drift(x + e)) - np.asarray(model.drift(x - e))) / (2 * h)
    scale = np.maximum(1.0, np.linalg.norm(exact, axis=(-2, -1)))
    return float(np.max(np.linalg.norm(fd - exact, axis=(-2, -1)) / scale))


# --------------------------------------------------------------------------
# builtin models


def zero_drift(d: int, A=None) -> SdeModel:
    A = np.eye(d) if A is None else A
    return SdeModel(
        d=d,
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        jacobian=lambda x: np.zeros(np.shape(x) + (d,)),
        hessian=lambda x: np.zeros(np.shape(x) + (d, d)),
        A=A,
        lipschitz_bound=0.0,
        name="zero-drift",
    )


def linear(B, A, name: str = "linear") -> SdeModel:
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    return SdeModel(
        d=d,
        drift=lambda x: np.asarray(x, dtype=float) @ B.T,
        jacobian=lambda x: np.broadcast_to(B, np.shape(x)[:-1] + (d, d)).copy(),
        hessian=lambda x: np.zeros(np.shape(x) + (d, d)),
        A=A,
        lipschitz_bound=float(np.linalg.norm(B, 2)),
        name=name,
    )


KINETIC_B = np.array([[0.0, 1.0], [0.0, 0.0]])
KINETIC_A = np.diag([0.0, 1.0])


def kinetic_linear() -> SdeModel:
    return linear(KINETIC_B, KINETIC_A, name="kinetic-linear")


def _pendulum_drift(x):
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1], np.sin(x[..., 0])], axis=-1)


def _pendulum_jacobian(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (2,))
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = np.cos(x[..., 0])
    return out


def _pendulum_hessian(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (2, 2))
    out[..., 1, 0, 0] = -np.sin(x[..., 0])
    return out


def pendulum(A=None) -> SdeModel:
    """``b(x, v) = (v, sin x)`` with noise on the velocity only."""
    return SdeModel(
        d=2,
        drift=_pendulum_drift,
        jacobian=_pendulum_jacobian,
        hessian=_pendulum_hessian,
        A=np.diag([0.0, 1.0]) if A is None else A,
        lipschitz_bound=math.sqrt(2.0),
        name="pendulum",
    )


def hamiltonian_model(grad_H: Callable, A_v, hess_H: Optional[Callable] = None, h: float = 1e-5) -> SdeModel:
    """Hamiltonian system with noise entering the momentum equation.

    ``grad_H`` maps ``(..., 2d)`` arrays ``(x, y)`` to ``(grad_x H, grad_y H)``;
    ``hess_H`` (optional) maps them to the ``(2d, 2d)`` Hessian.  Without a
    Hessian, the drift Jacobian is formed by central differences of ``grad_H``.
    The drift is ``(grad_y H, -grad_x H)`` and ``A = diag(0, A_v)``.
    """
    A_v = np.asarray(A_v, dtype=float)
    if A_v.ndim != 2 or A_v.shape[0] != A_v.shape[1]:
        raise ValueError("A_v must be square")
    d = A_v.shape[0]
    probe = np.asarray(grad_H(np.zeros(2 * d)))
    if probe.shape != (2 * d,):
        raise ValueError(f"grad_H must return {2 * d} components for A_v of size {d}, got shape {probe.shape}")

    def drift(z):
        g = np.asarray(grad_H(np.asarray(z, dtype=float)))
        return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)

    def hessian_of_H(z):
        z = np.asarray(z, dtype=float)
        if hess_H is not None:
            return np.asarray(hess_H(z))
        out = np.empty(z.shape + (2 * d,))
        for k in range(2 * d):
            step = h * (1.0 + np.abs(z[..., k : k + 1]))
            e = np.zeros(2 * d)
            e[k] = 1.0
            gp = np.asarray(grad_H(z + step * e))
            gm = np.asarray(grad_H(z - step * e))
            out[..., :, k] = (gp - gm) / (2 * step)
        return out

    def jacobian(z):
        Hm = hessian_of_H(z)
        return np.concatenate([Hm[..., d:, :], -Hm[..., :d, :]], axis=-2)

    A = np.zeros((2 * d, 2 * d))
    A[d:, d:] = A_v
    return SdeModel(d=2 * d, drift=drift, jacobian=jacobian, A=A, name="hamiltonian")


# --------------------------------------------------------------------------
# lockstep RK4 core


def _rk4(model, X, J, K, h, flow):
    """One RK4 step of per-row length ``h``; returns (X, J, K, trace increment)."""
    hx = h[:, None]
    b, jac = model.drift, model.jacobian
    k1 = b(X)
    X2 = X + 0.5 * hx * k1
    k2 = b(X2)
    X3 = X + 0.5 * hx * k2
    k3 = b(X3)
    X4 = X + hx * k3
    k4 = b(X4)
    Xn = X + hx / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not flow:
        return Xn, J, K, None
    hm = h[:, None, None]
    G1, G2, G3, G4 = jac(X), jac(X2), jac(X3), jac(X4)
    j1 = G1 @ J
    j2 = G2 @ (J + 0.5 * hm * j1)
    j3 = G3 @ (J + 0.5 * hm * j2)
    j4 = G4 @ (J + hm * j3)
    c1 = -K @ G1
    c2 = -(K + 0.5 * hm * c1) @ G2
    c3 = -(K + 0.5 * hm * c2) @ G3
    c4 = -(K + hm * c3) @ G4
    Jn = J + hm / 6.0 * (j1 + 2.0 * j2 + 2.0 * j3 + j4)
    Kn = K + hm / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
    tr = np.trace(G1 + 2.0 * G2 + 2.0 * G3 + G4, axis1=-2, axis2=-1)
    return Xn, Jn, Kn, h / 6.0 * tr


def propagate(
    model: SdeModel,
    x0,
    h: np.ndarray,
    dL: np.ndarray,
    jumps: np.ndarray,
    drift_rate: float,
    *,
    flow: bool = False,
    reduced: bool = False,
    record: bool = False,
    obs_code: Optional[np.ndarray] = None,
    n_obs: int = 0,
):
    """Advance ``n`` paths in lockstep over ``M`` cells each.

    ``h`` is ``(n, M)`` cell lengths (zero-width padding allowed), ``dL`` is
    ``(n, M, d)`` increments applied at cell ends and ``jumps`` the clock jump
    carried by each cell end.  With ``reduced``, the matrix
    ``C_t = int K A A* K* dS`` is accumulated: jump terms exactly, the drift
    part of the clock by the endpoint-corrected trapezoid rule.
    """
    n, M = h.shape
    d = model.d
    A = model.A
    X = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (n, d)))
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    J = eye.copy() if flow or reduced else None
    K = eye.copy() if flow or reduced else None
    flow = flow or reduced
    AAt = A @ A.T
    C = np.zeros((n, d, d)) if reduced else None
    tr_int = np.zeros(n) if flow else None
    X_obs = np.full((n, n_obs, d), np.nan) if n_obs else None
    rec = None
    if record:
        rec = {
            "X": np.empty((M + 1, n, d)),
            "X_left": np.empty((M + 1, n, d)),
        }
        rec["X"][0] = X
        rec["X_left"][0] = X
        if flow:
            rec["J"] = np.empty((M + 1, n, d, d))
            rec["K"] = np.empty((M + 1, n, d, d))
            rec["trace"] = np.zeros((M + 1, n))
            rec["J"][0] = J
            rec["K"][0] = K
    AT = A.T
    for j in range(M):
        hj = h[:, j]
        if reduced:
            K0 = K
            G0 = model.jacobian(X)
        Xl, J, K, dtr = _rk4(model, X, J, K, hj, flow)
        if flow:
            tr_int += dtr
        if reduced:
            G1 = model.jacobian(Xl)
            f0 = K0 @ AAt @ _T(K0)
            f1 = K @ AAt @ _T(K)
            D0 = -K0 @ G0
            D1 = -K @ G1
            p0 = D0 @ AAt @ _T(K0)
            p0 = p0 + _T(p0)
            p1 = D1 @ AAt @ _T(K)
            p1 = p1 + _T(p1)
            hm = hj[:, None, None]
            C += drift_rate * (0.5 * hm * (f0 + f1) + hm * hm / 12.0 * (p0 - p1))
            C += jumps[:, j, None, None] * f1
        X = Xl + dL[:, j] @ AT
        if not np.all(np.isfinite(X)):
            raise FloatingPointError("non-finite state; the drift may not be globally Lipschitz")
        if n_obs:
            rows = obs_code[:, j] >= 0
            if rows.any():
                X_obs[rows, obs_code[rows, j]] = X[rows]
        if record:
            rec["X"][j + 1] = X
            rec["X_left"][j + 1] = Xl
            if flow:
                rec["J"][j + 1] = J
                rec["K"][j + 1] = K
                rec["trace"][j + 1] = tr_int
    return {"X": X, "J": J, "K": K, "C": C, "trace": tr_int, "X_obs": X_obs, "record": rec}


def _T(M):
    return np.swapaxes(M, -1, -2)


# --------------------------------------------------------------------------
# single-path API


@dataclass(frozen=True)
class TrajectoryBundle:
    """Aligned state, Jacobian and inverse-Jacobian paths on a noise grid.

    ``X[k]`` is the right value at ``times[k]``; ``X_left[k]`` is the left
    limit, so ``X[k] - X_left[k]`` is ``A dL`` for the cell ending at
    ``times[k]``.  ``trace_integral[k]`` is the RK4 integral of
    ``tr grad b(X_s)`` up to ``times[k]``.
    """

    model: SdeModel = field(repr=False)
    times: np.ndarray
    X: np.ndarray
    X_left: np.ndarray
    J: np.ndarray
    K: np.ndarray
    trace_integral: np.ndarray
    noise: DrivingNoisePath = field(repr=False)

    @property
    def jump_log(self):
        """(time, dL, dS) for every cell carrying a clock jump."""
        nz = self.noise
        idx = np.flatnonzero(nz.jump_flags)
        return [(float(self.times[k + 1]), nz.increments[k], float(nz.jump_sizes[k])) for k in idx]

    def inverse_residual(self) -> np.ndarray:
        """``||J_t K_t - I||`` (Frobenius) at every grid time."""
        return np.linalg.norm(self.J @ self.K - np.eye(self.model.d), axis=(-2, -1))

    def liouville_residual(self) -> np.ndarray:
        """``|log det J_t - int_0^t tr grad b(X_s) ds|`` at every grid time."""
        sign, logdet = np.linalg.slogdet(self.J)
        return np.abs(logdet - self.trace_integral)

    def state_at(self, t: float):
        """``(X_t, J_t, K_t)`` at any ``t`` in the horizon (noise-free partial step)."""
        if t < 0 or t > self.times[-1] * (1 + 1e-14):
            raise ValueError("t outside the bundle horizon")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(k, self.times.size - 1)
        if self.times[k] == t:
            return self.X[k], self.J[k], self.K[k]
        h = np.array([t - self.times[k]])
        X, J, K, _ = _rk4(self.model, self.X[k][None], self.J[k][None], self.K[k][None], h, True)
        return X[0], J[0], K[0]

    def to_csv(self, include_flow: bool = True) -> str:
        d = self.model.d
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["t"] + [f"X_{i}" for i in range(d)]
        if include_flow:
            head += [f"J_{i}{j}" for i in range(d) for j in range(d)]
            head += [f"K_{i}{j}" for i in range(d) for j in range(d)]
        w.writerow(head)
        for k, t in enumerate(self.times):
            row = [repr(float(t))] + [repr(float(v)) for v in self.X[k]]
            if include_flow:
                row += [repr(float(v)) for v in self.J[k].ravel()]
                row += [repr(float(v)) for v in self.K[k].ravel()]
            w.writerow(row)
        return buf.getvalue()


def integrate(model: SdeModel, noise: DrivingNoisePath, x0) -> TrajectoryBundle:
    """Integrate ``X``, ``J`` and ``K`` along one driving path.

    Parameters
    ----------
    model : SdeModel
    noise : DrivingNoisePath
        Must have dimension ``model.d``.
    x0 : array_like, shape (d,)

    Returns
    -------
    TrajectoryBundle
    """
    if noise.d != model.d:
        raise ValueError(f"noise dimension {noise.d} does not match model dimension {model.d}")
    h = np.diff(noise.grid)
    if np.any(h < 0):
        raise ValueError("noise grid must be nondecreasing")
    out = propagate(
        model,
        np.asarray(x0, dtype=float),
        h[None, :],
        noise.increments[None, :, :],
        noise.jump_sizes[None, :],
        noise.drift_rate,
        flow=True,
        record=True,
    )
    rec = out["record"]
    bundle = TrajectoryBundle(
        model=model,
        times=noise.grid.copy(),
        X=rec["X"][:, 0],
        X_left=rec["X_left"][:, 0],
        J=rec["J"][:, 0],
        K=rec["K"][:, 0],
        trace_integral=rec["trace"][:, 0],
        noise=noise,
    )
    if math.isfinite(model.lipschitz_bound):
        seen = np.linalg.norm(model.jacobian(bundle.X_left), ord=2, axis=(-2, -1)).max()
        if seen > 10 * max(model.lipschitz_bound, 1e-300):
            warnings.warn(
                f"|grad b| reached {seen:.3g}, more than 10x the declared bound {model.lipschitz_bound:.3g}",
                RuntimeWarning,
                stacklevel=2,
            )
    return bundle


def ito_product_residual(bundle: TrajectoryBundle, V: Callable, grad_V: Callable) -> float:
    """Pathwise defect of the product rule for ``K_t V(X_t)``.

    ``V`` maps ``(..., d)`` to ``(..., d, d)``; ``grad_V`` maps to
    ``(..., d, d, d)`` with last axis the derivative direction.  The residual
    is the max over grid times of

        || K_t V(X_t) - V(x0) - int_0^t K (b.grad V - grad b . V)(X_s) ds
           - sum_{s <= t} K_s (V(X_s) - V(X_{s-})) ||,

    with the time integral by the trapezoid rule on each cell, so it decays
    like the square of the mesh.
    """
    m = bundle.model
    X, Xl, K = bundle.X, bundle.X_left, bundle.K

    def integrand(x, k):
        dv = np.einsum("...ijk,...k->...ij", grad_V(x), m.drift(x))
        return k @ (dv - m.jacobian(x) @ V(x))

    g_start = integrand(X[:-1], K[:-1])
    g_end = integrand(Xl[1:], K[1:])
    h = np.diff(bundle.times)[:, None, None]
    drift_part = np.concatenate([np.zeros((1,) + g_start.shape[1:]), np.cumsum(0.5 * h * (g_start + g_end), axis=0)])
    jumps = K[1:] @ (V(X[1:]) - V(Xl[1:]))
    jump_part = np.concatenate([np.zeros((1,) + jumps.shape[1:]), np.cumsum(jumps, axis=0)])
    lhs = K @ V(X)
    res = lhs - V(X[0]) - drift_part - jump_part
    return float(np.max(np.linalg.norm(res, axis=(-2, -1))))
