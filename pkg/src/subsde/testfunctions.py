"""Test functions for the nonlocal generator.

The generator of ``A L`` acting on ``f`` is evaluated as
``int_0^inf [P_s f - f] nu_S(ds)`` where ``P_s f(y) = E f(y + A W_s)`` is the
Gaussian smoothing of ``f``.  Each test function therefore carries its value,
gradient, Hessian and, when available, a closed-form ``heat`` smoothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    """A scalar function with derivatives and Gaussian smoothing.

    ``heat(y, s, A)`` takes points ``(n, d)`` and clock values ``(k,)`` and
    returns ``(k, n)`` values of ``E f(y + A sqrt(s) Z)``.  ``lap2_bound(A)``
    bounds ``|tr(AA* grad^2)^2 f|``, which controls the bias from replacing
    small clock jumps by drift.
    """

    __test__ = False  # not a pytest class

    value: Callable
    grad: Callable
    heat: Callable
    hess: Optional[Callable] = None
    lap2_bound: Callable = lambda A: np.inf
    name: str = "f"


def cosine_wave(z, phase: float = 0.0) -> TestFunction:
    """``f(y) = cos(z.y - phase)``."""
    z = np.asarray(z, dtype=float)

    def value(y):
        return np.cos(np.asarray(y) @ z - phase)

    def grad(y):
        return -np.sin(np.asarray(y) @ z - phase)[..., None] * z

    def hess(y):
        return -np.cos(np.asarray(y) @ z - phase)[..., None, None] * np.outer(z, z)

    def heat(y, s, A):
        q = float(np.sum((A.T @ z) ** 2))
        return np.exp(-0.5 * q * np.asarray(s))[:, None] * value(y)[None, :]

    return TestFunction(value, grad, heat, hess, lambda A: float(np.sum((A.T @ z) ** 2)) ** 2, "cosine")


def gaussian_bump(center, width: float) -> TestFunction:
    """Unnormalized ``f(y) = exp(-|y - center|**2 / (2 width**2))``."""
    m = np.asarray(center, dtype=float)
    w2 = float(width) ** 2

    def value(y):
        r = np.asarray(y) - m
        return np.exp(-0.5 * np.sum(r * r, axis=-1) / w2)

    def grad(y):
        r = np.asarray(y) - m
        return -(r / w2) * value(y)[..., None]

    def hess(y):
        r = np.asarray(y) - m
        outer = r[..., :, None] * r[..., None, :] / (w2 * w2)
        return (outer - np.eye(m.size) / w2) * value(y)[..., None, None]

    def heat(y, s, A):
        lam, Q = np.linalg.eigh(A @ A.T)
        lam = np.clip(lam, 0.0, None)
        u2 = ((np.asarray(y) - m) @ Q) ** 2  # (n, d)
        s = np.asarray(s, dtype=float)[:, None]
        denom = w2 + s * lam  # (k, d)
        pref = np.prod(np.sqrt(w2 / denom), axis=1)  # (k,)
        return pref[:, None] * np.exp(-0.5 * (u2[None, :, :] / denom[:, None, :]).sum(-1))

    def lap2(A):
        return 3.0 * float(np.abs(A @ A.T).sum()) ** 2 / w2**2

    return TestFunction(value, grad, heat, hess, lap2, "gaussian-bump")


def constant(c: float, d: int) -> TestFunction:
    return TestFunction(
        value=lambda y: np.full(np.shape(y)[:-1], float(c)),
        grad=lambda y: np.zeros(np.shape(y)),
        heat=lambda y, s, A: np.full((np.size(s), np.shape(y)[0]), float(c)),
        hess=lambda y: np.zeros(np.shape(y) + (d,)),
        lap2_bound=lambda A: 0.0,
        name="constant",
    )


def linear_function(v) -> TestFunction:
    v = np.asarray(v, dtype=float)
    return TestFunction(
        value=lambda y: np.asarray(y) @ v,
        grad=lambda y: np.broadcast_to(v, np.shape(y)).copy(),
        heat=lambda y, s, A: np.broadcast_to(np.asarray(y) @ v, (np.size(s), np.shape(y)[0])).copy(),
        hess=lambda y: np.zeros(np.shape(y) + (v.size,)),
        lap2_bound=lambda A: 0.0,
        name="linear",
    )


def from_callables(value: Callable, grad: Callable, d: int, hess: Optional[Callable] = None, n_nodes: Optional[int] = None) -> TestFunction:
    """Wrap plain callables; Gaussian smoothing falls back to Gauss-Hermite."""
    from .oracles import gauss_hermite_mean

    def heat(y, s, A):
        y = np.asarray(y, dtype=float)
        out = np.empty((np.size(s), y.shape[0]))
        for i, yi in enumerate(y):
            out[:, i] = gauss_hermite_mean(lambda w: value(yi + w @ A.T), d, s, n_nodes)
        return out

    return TestFunction(value, grad, heat, hess, name="callable")
