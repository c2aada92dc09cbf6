"""Estimators on simulated ensembles: characteristic functions, densities, and
the weak form of the nonlocal Fokker-Planck equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .batch import simulate_batch
from .flow import SdeModel
from .oracles import mixture_integral
from .subordinator import CHUNK, DEFAULT_EPS, SubordinatorSpec, seed_sequence
from .testfunctions import TestFunction


@dataclass(frozen=True)
class SampleEnsemble:
    """Terminal states ``(N, d)`` with free-form metadata."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("an ensemble needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("ensemble contains non-finite samples")
        object.__setattr__(self, "samples", x)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


def empirical_cf(ensemble: SampleEnsemble, z):
    """Empirical characteristic function and its standard error.

    The phase is taken relative to the first sample, which makes the estimate
    exact for a constant ensemble and exactly Hermitian in ``z``.  ``z`` is a
    single frequency ``(d,)`` or a stack ``(k, d)``.
    """
    x = ensemble.samples
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    zs = np.atleast_2d(z).reshape(-1, ensemble.d)
    ref = x[0]
    vals = np.empty(zs.shape[0], dtype=complex)
    for i, zz in enumerate(zs):
        phase = (x - ref) @ zz
        m = complex(np.cos(phase).mean(), np.sin(phase).mean())
        if abs(m) > 1.0:
            m = m / abs(m)
        vals[i] = complex(math.cos(ref @ zz), math.sin(ref @ zz)) * m
    se = np.sqrt(np.clip(1.0 - np.abs(vals) ** 2, 0.0, None) / ensemble.N)
    return (vals[0], float(se[0])) if single else (vals, se)


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-coordinate Silverman bandwidth with a MAD scale estimate."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = x.shape
    mad = np.median(np.abs(x - np.median(x, axis=0)), axis=0) / 0.6744897501960817
    scale = np.where(mad > 0, mad, np.std(x, axis=0))
    scale = np.where(scale > 0, scale, 1.0)
    return scale * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def kde_density(ensemble: SampleEnsemble, grid, bandwidth=None, block: int = 8192) -> np.ndarray:
    """Gaussian product-kernel density estimate on a tensor grid.

    Parameters
    ----------
    ensemble : SampleEnsemble
    grid : array or sequence of arrays
        One axis per coordinate; a bare 1-D array is accepted for ``d = 1``.
    bandwidth : float or array, optional
        Per-coordinate bandwidths; Silverman's rule with a MAD scale by default.

    Returns
    -------
    ndarray of shape ``(len(grid[0]), ..., len(grid[d-1]))``.
    """
    d = ensemble.d
    axes = [np.asarray(grid, dtype=float)] if d == 1 and np.ndim(grid[0]) == 0 else [np.asarray(g, dtype=float) for g in grid]
    if len(axes) != d or any(a.size == 0 for a in axes):
        raise ValueError("grid must supply one nonempty axis per coordinate")
    h = silverman_bandwidth(ensemble.samples) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,))
    if np.any(h <= 0):
        raise ValueError("bandwidth must be positive")
    x = ensemble.samples
    out = np.zeros([a.size for a in axes])
    letters = "abcdefgh"[:d]
    spec = ",".join(f"{c}n" for c in letters) + "->" + letters
    for s in range(0, ensemble.N, block):
        xs = x[s : s + block]
        kern = [
            np.exp(-0.5 * ((a[:, None] - xs[:, j]) / h[j]) ** 2) / (h[j] * math.sqrt(2.0 * math.pi))
            for j, a in enumerate(axes)
        ]
        out += np.einsum(spec, *kern, optimize=True)
    return out / ensemble.N


def grid_mass(density: np.ndarray, grid) -> float:
    """Trapezoid mass of a tensor-grid density."""
    axes = [grid] if density.ndim == 1 and np.ndim(grid[0]) == 0 else list(grid)
    m = density
    for a in reversed(axes):
        m = np.trapezoid(m, np.asarray(a, dtype=float), axis=-1)
    return float(m)


def generator_apply(model: SdeModel, spec: SubordinatorSpec, f: TestFunction, y, block: Optional[int] = None):
    """``(L_A f)(y) + b(y).grad f(y)`` for points ``y`` of shape ``(d,)`` or ``(n, d)``.

    The jump part is the symmetrized integral, written through the clock as
    ``int_0^inf [E f(y + A W_s) - f(y)] nu_S(ds)``.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    if Y.shape[1] != model.d:
        raise ValueError(f"points must have dimension {model.d}")
    block = block or 2048
    out = np.empty(Y.shape[0])
    for s in range(0, Y.shape[0], block):
        Yb = Y[s : s + block]
        f0 = f.value(Yb)
        jump = mixture_integral(spec, lambda u: f.heat(Yb, u, model.A) - f0[None, :])
        drift = np.einsum("nd,nd->n", model.drift(Yb), f.grad(Yb))
        out[s : s + block] = jump + drift
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("generator quadrature failed")
    return float(out[0]) if single else out


class FpResidual(NamedTuple):
    residual: float
    budget: float
    lhs: float  # central time difference of E f(X_t)
    rhs: float  # E (L_A f + b.grad f)(X_t)
    sigma: float  # Monte Carlo standard error of lhs - rhs
    discretization: float  # Richardson estimate of the O(dt**2) error
    truncation_bias: float  # bound on the effect of drift-compensating small clock jumps

    @property
    def passed(self) -> bool:
        return self.residual <= self.budget


def fokker_planck_residual(
    model: SdeModel,
    spec: SubordinatorSpec,
    f: TestFunction,
    x0,
    t: float,
    dt: Optional[float] = None,
    N: int = 100_000,
    seed=None,
    *,
    inner: int = 64,
    eps: float = DEFAULT_EPS,
    dt_max: Optional[float] = None,
    threads: int = 1,
) -> FpResidual:
    """Weak Fokker-Planck residual at time ``t``.

    ``N`` outer paths run to ``t - 2 dt``; each continues with ``inner``
    conditionally independent copies observed at ``t - dt, t, t + dt, t + 2 dt``.
    The central difference uses the same continuations at every time point, and
    averaging over them removes most of the variance of ``f(X_{t+dt}) -
    f(X_{t-dt})``.  The generator is evaluated at the first continuation's
    ``X_t``.  The budget is ``3 sigma`` plus a Richardson estimate of the
    central-difference error from the ``2 dt`` difference plus the bound
    ``|Delta_A^2 f| / 8 * int_0^eps u**2 nu_S(du)`` on the clock truncation
    bias.  If ``t < 2 dt`` the window starts at zero and no Richardson term is
    available.
    """
    if dt is None:
        dt = 1e-2 * t
    if not 0.0 < dt < t:
        raise ValueError("need 0 < dt < t")
    if inner < 1 or N < 2:
        raise ValueError("need N >= 2 and inner >= 1")
    d = model.d
    x0 = np.asarray(x0, dtype=float)
    rich = t >= 2.0 * dt
    start_t = t - 2.0 * dt if rich else t - dt
    offsets = [dt, 2 * dt, 3 * dt, 4 * dt] if rich else [dt, 2 * dt]
    window = offsets[-1]
    if dt_max is None:
        dt_max = dt / 4.0
    root_outer, root_inner = seed_sequence(seed).spawn(2)
    if start_t > 0:
        X_start = simulate_batch(model, spec, x0, start_t, N, root_outer, eps=eps, dt_max=dt_max, threads=threads).X
    else:
        X_start = np.broadcast_to(x0, (N, d)).copy()
    block = max(1, CHUNK * 8 // inner)
    n_blocks = math.ceil(N / block)
    inner_seeds = root_inner.spawn(n_blocks)
    d1 = np.empty(N)
    d2 = np.empty(N)
    gen = np.empty(N)
    for k in range(n_blocks):
        sl = slice(k * block, min(N, (k + 1) * block))
        n = sl.stop - sl.start
        starts = np.repeat(X_start[sl], inner, axis=0)
        res = simulate_batch(
            model, spec, starts, window, n * inner, inner_seeds[k],
            eps=eps, dt_max=dt_max, observe=offsets, threads=threads, chunk=CHUNK * 8,
        )
        fv = f.value(res.X_obs).reshape(n, inner, len(offsets))
        if rich:
            d1[sl] = (fv[:, :, 2] - fv[:, :, 0]).mean(axis=1) / (2 * dt)
            d2[sl] = (fv[:, :, 3] - f.value(X_start[sl])[:, None]).mean(axis=1) / (4 * dt)
            x_mid = res.X_obs[::inner, 1]
        else:
            d1[sl] = (fv[:, :, 1] - f.value(X_start[sl])[:, None]).mean(axis=1) / (2 * dt)
            x_mid = res.X_obs[::inner, 0]
        gen[sl] = generator_apply(model, spec, f, x_mid)
    lhs = float(d1.mean())
    rhs = float(gen.mean())
    sigma = float(np.std(d1 - gen, ddof=1) / math.sqrt(N))
    disc = abs(float(d2.mean()) - lhs) / 3.0 if rich else 0.0
    bias = f.lap2_bound(model.A) / 8.0 * spec.truncated_second_moment(eps)
    return FpResidual(abs(lhs - rhs), 3.0 * sigma + disc + bias, lhs, rhs, sigma, disc, bias)


def cf_table_rows(z_grid, values, se) -> list:
    """Rows ``(z..., re, im, se)`` for CSV export."""
    return [list(map(float, z)) + [float(v.real), float(v.imag), float(s)] for z, v, s in zip(np.atleast_2d(z_grid), values, se)]


def ensemble_from_batch(X: np.ndarray, **meta) -> SampleEnsemble:
    return SampleEnsemble(np.asarray(X), dict(meta))


def truncation_bias(sys_B, A, spec: SubordinatorSpec, t: float, z, eps: float = DEFAULT_EPS, n: int = 257) -> float:
    """Bound on the CF error from replacing clock jumps below ``eps`` by drift.

    Along the path the exponent changes by at most ``t * q**2 / 2 * m2(eps)``
    with ``q = max_s |A* e^{s B*} z|**2 / 2`` and ``m2`` the truncated second
    moment; ``|e^a - e^b| <= |a - b|`` for nonpositive real parts.
    """
    from scipy import linalg

    z = np.asarray(z, dtype=float)
    s = np.linspace(0.0, t, n)
    q = max(float(np.sum((z @ linalg.expm(si * np.asarray(sys_B, float)) @ np.asarray(A, float)) ** 2)) for si in s) / 2.0
    return t * q * q / 2.0 * spec.truncated_second_moment(eps)


__all__: Sequence[str] = [
    "SampleEnsemble", "empirical_cf", "silverman_bandwidth", "kde_density", "grid_mass",
    "generator_apply", "FpResidual", "fokker_planck_residual", "cf_table_rows",
    "ensemble_from_batch", "truncation_bias",
]
