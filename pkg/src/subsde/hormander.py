"""Bracket hierarchy ``B_n`` of a drift and the rank conditions built on it.

``B_1 = grad b`` and ``B_n = (b . grad) B_{n-1} - grad b B_{n-1}``.  The
directional derivative along ``b(x)`` is taken by central differences with one
Richardson level unless an analytic Hessian gives ``B_2`` directly.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .flow import SdeModel

DEFAULT_TOL = 1e-8
RICHARDSON_TOL = 1e-3


@dataclass(frozen=True)
class BracketHierarchy:
    x: np.ndarray
    n: int
    matrices: list  # [B_1, ..., B_n]
    stacked: np.ndarray  # d x (n+1)d matrix [A, B_1 A, ..., B_n A]
    singular_values: np.ndarray
    unstable: list  # per-matrix boolean masks of entries whose Richardson levels disagree

    @property
    def any_unstable(self) -> bool:
        return any(bool(m.any()) for m in self.unstable)


def _directional(F: Callable, x, v, h):
    """Richardson-extrapolated central difference of ``F`` along ``v`` and the
    disagreement between the extrapolated value and the finer level."""
    speed = np.linalg.norm(v)
    if speed == 0.0:
        z = np.zeros_like(F(x))
        return z, z
    u = v / speed
    d1 = (F(x + h * u) - F(x - h * u)) / (2 * h)
    d2 = (F(x + 0.5 * h * u) - F(x - 0.5 * h * u)) / h
    rich = (4.0 * d2 - d1) / 3.0
    return speed * rich, speed * np.abs(rich - d2)


def _step(x, h, level):
    base = 1e-4 * (1.0 + np.linalg.norm(x)) if h is None else h
    # nested differencing amplifies rounding; coarser steps at deeper levels
    return base * 8.0 ** max(level - 2, 0)


def _bracket_fn(model: SdeModel, k: int, h):
    """``x -> (B_k(x), instability)`` built recursively."""
    if k == 1:
        return lambda x: (model.jacobian(x), np.zeros((model.d, model.d)))
    if k == 2 and model.hessian is not None:

        def b2(x):
            G = model.jacobian(x)
            return np.einsum("ijk,k->ij", model.hessian(x), model.drift(x)) - G @ G, np.zeros_like(G)

        return b2
    prev = _bracket_fn(model, k - 1, h)

    def bk(x):
        x = np.asarray(x, dtype=float)
        step = _step(x, h, k)
        D, diff = _directional(lambda y: prev(y)[0], x, model.drift(x), step)
        val = D - model.jacobian(x) @ prev(x)[0]
        scale = max(np.max(np.abs(val)), 1e-300)
        bad = diff > RICHARDSON_TOL * np.maximum(np.abs(val), 1e-6 * scale)
        return val, bad

    return bk


def bracket_hierarchy(model: SdeModel, x, n: int, h: Optional[float] = None) -> BracketHierarchy:
    """Matrices ``B_1..B_n`` at ``x`` and the stacked rank object.

    Parameters
    ----------
    model : SdeModel
    x : array (d,)
    n : int
        Highest order, at least 1.  Orders above 4 warn: nested differencing
        loses accuracy quickly, and analytic derivatives are preferable.
    h : float, optional
        Base differencing step; ``1e-4 (1 + |x|)`` by default.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > 4:
        warnings.warn("orders above 4 rely on deeply nested differences; supply analytic derivatives", RuntimeWarning, stacklevel=2)
    x = np.asarray(x, dtype=float)
    mats, masks = [], []
    for k in range(1, n + 1):
        val, bad = _bracket_fn(model, k, h)(x)
        mats.append(np.asarray(val, dtype=float))
        masks.append(np.asarray(bad, dtype=bool))
    stacked = np.concatenate([model.A] + [B @ model.A for B in mats], axis=1)
    sv = np.linalg.svd(stacked, compute_uv=False)
    return BracketHierarchy(x, n, mats, stacked, sv, masks)


class RankCheck(NamedTuple):
    passed: bool
    rank: int
    smallest_retained: float


def numerical_rank(M: np.ndarray, tol: float = DEFAULT_TOL) -> RankCheck:
    if tol <= 0:
        raise ValueError("tol must be positive")
    sv = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    d = M.shape[0]
    if sv.size == 0 or sv[0] == 0.0:
        return RankCheck(False, 0, 0.0)
    kept = sv[sv > tol * sv[0]]
    return RankCheck(kept.size == d, int(kept.size), float(kept[-1]))


def check_Hn(model: SdeModel, x, n: int, tol: float = DEFAULT_TOL, h: Optional[float] = None) -> RankCheck:
    """Whether ``[A, B_1 A, ..., B_n A]`` has full rank at ``x``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if n == 0:
        return numerical_rank(model.A, tol)
    return numerical_rank(bracket_hierarchy(model, x, n, h).stacked, tol)


def kalman_matrix(B, A) -> np.ndarray:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    blocks = [A]
    for _ in range(B.shape[0] - 1):
        blocks.append(B @ blocks[-1])
    return np.concatenate(blocks, axis=1)


def kalman_rank(B, A, tol: float = DEFAULT_TOL) -> int:
    """Numerical rank of ``[A, BA, ..., B^{d-1} A]``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if B.shape != A.shape or B.shape[0] != B.shape[1]:
        raise ValueError("B and A must be square matrices of equal size")
    return numerical_rank(kalman_matrix(B, A), tol).rank


def uniform_h1_constant(model: SdeModel, sample_points) -> float:
    """``min_x lambda_min(A A* + grad b(x) A (grad b(x) A)*)`` over the sample points."""
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("need at least one sample point")
    A = model.A
    GA = model.jacobian(pts) @ A
    M = A @ A.T + GA @ np.swapaxes(GA, -1, -2)
    return float(max(np.linalg.eigvalsh(M)[:, 0].min(), 0.0))


def uniform_hn_constant(model: SdeModel, sample_points, n: int, h: Optional[float] = None) -> float:
    """Diagnostic analogue with ``n`` bracket terms: ``min_x lambda_min(sum_k B_k A (B_k A)*)``, ``B_0 = I``.

    No density statement is attached to this quantity for ``n >= 2``.
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("need at least one sample point")
    out = np.inf
    for x in pts:
        S = bracket_hierarchy(model, x, n, h).stacked
        out = min(out, float(np.linalg.eigvalsh(S @ S.T)[0]))
    return max(out, 0.0)


def rank_report_csv(model: SdeModel, points: Sequence, n: int, tol: float = DEFAULT_TOL) -> str:
    """CSV rows ``(x..., rank, smallest_sv, pass)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{i}" for i in range(model.d)] + ["rank", "smallest_sv", "pass"])
    for x in np.atleast_2d(points):
        res = check_Hn(model, x, n, tol)
        w.writerow([repr(float(v)) for v in x] + [res.rank, repr(res.smallest_retained), int(res.passed)])
    return buf.getvalue()
