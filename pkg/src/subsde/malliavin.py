"""Malliavin covariance matrices along simulated paths and their small-ball statistics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .batch import simulate_batch
from .flow import SdeModel, TrajectoryBundle, _T
from .subordinator import DEFAULT_EPS, SubordinatorPath, SubordinatorSpec


@dataclass(frozen=True)
class MalliavinCovariance:
    """``sigma = J_t C_t J_t*`` with ``C_t = int_0^t K A A* K* dS``."""

    sigma: np.ndarray
    reduced: np.ndarray
    t: float

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma)[0])

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.sigma)


def _drift_cell(model, AAt, X0, K0, X1, K1, h):
    """Endpoint-corrected trapezoid for ``int K A A* K* ds`` over one cell."""
    f0 = K0 @ AAt @ _T(K0)
    f1 = K1 @ AAt @ _T(K1)
    p0 = -K0 @ model.jacobian(X0) @ AAt @ _T(K0)
    p1 = -K1 @ model.jacobian(X1) @ AAt @ _T(K1)
    return 0.5 * h * (f0 + f1) + h * h / 12.0 * ((p0 + _T(p0)) - (p1 + _T(p1)))


def covariance(bundle: TrajectoryBundle, path: SubordinatorPath, t: Optional[float] = None) -> MalliavinCovariance:
    """Malliavin covariance of ``X_t`` along one path.

    Jump terms ``K A A* K* dS`` are summed exactly at the logged jumps; the
    drift part of the clock is integrated on the integrator's own cells with
    the endpoint-corrected trapezoid rule, which matches the RK4 accuracy.
    """
    m = bundle.model
    times = bundle.times
    t = float(times[-1]) if t is None else float(t)
    if t < 0 or t > times[-1] * (1 + 1e-14):
        raise ValueError("t outside the bundle horizon")
    if not math.isclose(path.drift_rate, bundle.noise.drift_rate, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError("path and bundle disagree on the clock drift rate")
    AAt = m.A @ m.A.T
    r = path.drift_rate
    k = int(np.searchsorted(times, t, side="right")) - 1  # last grid time <= t
    C = np.zeros((m.d, m.d))
    if k > 0:
        h = np.diff(times[: k + 1])[:, None, None]
        cells = _drift_cell(m, AAt, bundle.X[:k], bundle.K[:k], bundle.X_left[1 : k + 1], bundle.K[1 : k + 1], h)
        C = C + r * cells.sum(axis=0)
        sizes = bundle.noise.jump_sizes[:k][:, None, None]
        Kj = bundle.K[1 : k + 1]
        C = C + (sizes * (Kj @ AAt @ _T(Kj))).sum(axis=0)
    X_t, J_t, K_t = bundle.state_at(t)
    if t > times[k]:
        C = C + r * _drift_cell(m, AAt, bundle.X[k], bundle.K[k], X_t, K_t, t - times[k])
    C = 0.5 * (C + C.T)
    sigma = J_t @ C @ J_t.T
    return MalliavinCovariance(0.5 * (sigma + sigma.T), C, t)


def directional_energy(bundle: TrajectoryBundle, path: SubordinatorPath, a, t: Optional[float] = None) -> float:
    """``int_0^t |a K_s A|**2 dS_s`` for a unit row vector ``a``."""
    a = np.asarray(a, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("a must be a unit vector")
    return float(a @ covariance(bundle, path, t).reduced @ a)


def wilson_interval(k, n, level: float = 0.99):
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    z = stats.norm.ppf(0.5 + level / 2.0)
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


def stable_half_cdf(spec: SubordinatorSpec, t: float, x):
    """``P{S_t <= x}`` for the stable subordinator with index one half."""
    if spec.kind != "stable" or spec.beta != 0.5:
        raise ValueError("closed form needs a stable subordinator of index 1/2")
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return special.erfc(spec.c * math.sqrt(math.pi) * t / np.sqrt(x))


@dataclass(frozen=True)
class SmallBallProfile:
    a_grid: np.ndarray  # (na, d)
    eps_grid: np.ndarray  # (ne,)
    p_hat: np.ndarray  # (na, ne)
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    slopes: np.ndarray  # (na,) log-log slope of p_hat against eps
    N: int

    def to_rows(self) -> list:
        return [
            [i, float(e), float(self.p_hat[i, j]), float(self.ci_lo[i, j]), float(self.ci_hi[i, j])]
            for i in range(self.a_grid.shape[0])
            for j, e in enumerate(self.eps_grid)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a_index", "eps", "p_hat", "ci_lo", "ci_hi"])
        for row in self.to_rows():
            w.writerow([row[0]] + [repr(v) for v in row[1:]])
        return buf.getvalue()


def loglog_slope(eps, p) -> float:
    """Least-squares slope of ``log p`` on ``log eps`` over points with ``0 < p < 1``."""
    eps, p = np.asarray(eps, float), np.asarray(p, float)
    keep = (p > 0) & (p < 1)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(eps[keep]), np.log(p[keep]), 1)[0])


def energies(model: SdeModel, spec: SubordinatorSpec, x0, t: float, a_grid, N: int, seed=None, *,
             eps: float = DEFAULT_EPS, dt_max: Optional[float] = None, threads: int = 1):
    """Directional energies ``a C_t a*`` for every ``a`` in ``a_grid`` over ``N`` paths, shape ``(na, N)``."""
    a = np.atleast_2d(np.asarray(a_grid, dtype=float))
    res = simulate_batch(model, spec, x0, t, N, seed, eps=eps, dt_max=dt_max, reduced=True, threads=threads)
    return np.einsum("ai,nij,aj->an", a, res.C, a), res


def small_ball_profile(
    model: SdeModel,
    spec: SubordinatorSpec,
    x0,
    t: float,
    a_grid,
    eps_grid: Sequence[float],
    N: int = 10_000,
    seed=None,
    *,
    eps: float = DEFAULT_EPS,
    dt_max: Optional[float] = None,
    threads: int = 1,
    level: float = 0.99,
) -> SmallBallProfile:
    """Empirical ``P{int_0^t |a K_s A|**2 dS_s <= e}`` per direction and level.

    Parameters
    ----------
    a_grid : array (na, d)
        Unit row vectors.
    eps_grid : sequence of float
        Levels ``e`` at which the probability is estimated.
    N : int
        At least ``10**4`` paths.
    eps : float
        Clock truncation level of the simulation.
    """
    if N < 10_000:
        raise ValueError("N must be at least 10**4")
    a = np.atleast_2d(np.asarray(a_grid, dtype=float))
    if np.any(np.abs(np.linalg.norm(a, axis=1) - 1.0) > 1e-12):
        raise ValueError("a_grid rows must be unit vectors")
    e = np.asarray(eps_grid, dtype=float)
    en, _ = energies(model, spec, x0, t, a, N, seed, eps=eps, dt_max=dt_max, threads=threads)
    counts = (en[:, :, None] <= e[None, None, :]).sum(axis=1)
    p = counts / N
    lo, hi = wilson_interval(counts, N, level)
    slopes = np.array([loglog_slope(e, row) for row in p])
    return SmallBallProfile(a, e, p, lo, hi, slopes, N)
