"""Subordinated Brownian increments ``L = W_S`` synthesized conditionally on a clock path."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .subordinator import (
    DEFAULT_EPS,
    SubordinatorPath,
    SubordinatorSpec,
    _ensure_rng,
    big_jump_rate,
    chunk_streams,
    sample_big_jump_displacement,
    sample_clock_totals,
)


@dataclass(frozen=True)
class DrivingNoisePath:
    """Increments of ``L`` on a grid containing every clock jump time.

    Cell ``k`` is ``(grid[k], grid[k+1]]``.  Its increment ``increments[k]`` is
    attached to the right endpoint and is Gaussian with covariance
    ``clock[k] * I`` given the clock, where ``clock[k]`` is the drift part
    ``drift_rate * (grid[k+1] - grid[k])`` plus the jump ``jump_sizes[k]`` if
    ``jump_flags[k]``.
    """

    grid: np.ndarray
    increments: np.ndarray
    jump_flags: np.ndarray
    jump_sizes: np.ndarray
    drift_rate: float

    @property
    def d(self) -> int:
        return self.increments.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def clock(self) -> np.ndarray:
        return self.drift_rate * np.diff(self.grid) + self.jump_sizes

    def total(self) -> np.ndarray:
        return self.increments.sum(axis=0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"dL_{i}" for i in range(self.d)] + ["jump"])
        for t, inc, flag in zip(self.grid[1:], self.increments, self.jump_flags):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in inc] + [int(flag)])
        return buf.getvalue()


def _mesh_with_jumps(horizon, jump_times, dt_max):
    m = max(1, math.ceil(horizon / dt_max - 1e-12))
    mesh = np.linspace(0.0, horizon, m + 1)
    grid = np.union1d(mesh, jump_times)
    return grid


def synthesize_noise(path: SubordinatorPath, d: int, dt_max: Optional[float] = None, rng=None) -> DrivingNoisePath:
    """Sample ``L`` increments given a clock path.

    Parameters
    ----------
    path : SubordinatorPath
        The clock.  Every jump time becomes a grid point.
    d : int
        Dimension of the Brownian motion.
    dt_max : float, optional
        Mesh bound for the drift part of the clock; defaults to ``T / 256``.
    rng : numpy Generator or seed

    Returns
    -------
    DrivingNoisePath
    """
    rng = _ensure_rng(rng)
    T = path.horizon
    if T == 0:
        return DrivingNoisePath(np.zeros(1), np.zeros((0, d)), np.zeros(0, bool), np.zeros(0), path.drift_rate)
    if dt_max is None:
        dt_max = T / 256
    if dt_max <= 0:
        raise ValueError("dt_max must be positive")
    grid = _mesh_with_jumps(T, path.jump_times, dt_max)
    m = grid.size - 1
    sizes = np.zeros(m)
    flags = np.zeros(m, dtype=bool)
    # cell k ends at grid[k+1]
    idx = np.searchsorted(grid, path.jump_times) - 1
    sizes[idx] = path.jump_sizes
    flags[idx] = True
    clock = path.drift_rate * np.diff(grid) + sizes
    inc = np.sqrt(clock)[:, None] * rng.standard_normal((m, d))
    return DrivingNoisePath(grid, inc, flags, sizes, path.drift_rate)


def refine(noise: DrivingNoisePath, rng=None) -> DrivingNoisePath:
    """Halve every cell, splitting increments by Brownian bridges.

    The clock jump of a cell stays at its right endpoint, so the left half of
    each cell carries drift only.  The refined path has the same conditional
    law and the same cell sums as ``noise``.
    """
    rng = _ensure_rng(rng)
    g = noise.grid
    mid = 0.5 * (g[:-1] + g[1:])
    h = np.diff(g)
    v_left = noise.drift_rate * 0.5 * h
    v_right = v_left + noise.jump_sizes
    v = v_left + v_right
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(v > 0, v_left / v, 0.0)
        sd = np.where(v > 0, np.sqrt(v_left * v_right / v), 0.0)
    z = rng.standard_normal(noise.increments.shape)
    left = w[:, None] * noise.increments + sd[:, None] * z
    right = noise.increments - left
    m = h.size
    grid = np.empty(2 * m + 1)
    grid[0::2] = g
    grid[1::2] = mid
    inc = np.empty((2 * m, noise.d))
    inc[0::2] = left
    inc[1::2] = right
    flags = np.zeros(2 * m, dtype=bool)
    flags[1::2] = noise.jump_flags
    sizes = np.zeros(2 * m)
    sizes[1::2] = noise.jump_sizes
    return DrivingNoisePath(grid, inc, flags, sizes, noise.drift_rate)


def _cf(samples: np.ndarray, z_grid: np.ndarray) -> np.ndarray:
    phase = samples @ z_grid.T
    return np.exp(1j * phase).mean(axis=0)


def decomposition_samples(spec: SubordinatorSpec, d: int, T: float, N: int, rng, eps: float = DEFAULT_EPS, A=None):
    """Samples of ``A W_{S_T}`` drawn with the full clock and with the split clock.

    The second family uses the clock restricted to jumps below one plus an
    independent compound Poisson sum of big-jump displacements at rate
    ``nu_S([1, inf))``.
    """
    A = np.eye(d) if A is None else np.asarray(A, dtype=float)
    full = np.empty((N, d))
    split = np.empty((N, d))
    lam = big_jump_rate(spec)
    start = 0
    for size, gen in chunk_streams(rng, N):
        sl = slice(start, start + size)
        s_full = sample_clock_totals(spec, T, size, gen, eps)
        full[sl] = np.sqrt(s_full)[:, None] * gen.standard_normal((size, d))
        s_small = sample_clock_totals(spec, T, size, gen, eps, upper=1.0)
        small = np.sqrt(s_small)[:, None] * gen.standard_normal((size, d))
        counts = gen.poisson(lam * T, size=size) if T > 0 else np.zeros(size, int)
        xi = sample_big_jump_displacement(spec, d, gen, size=int(counts.sum()))
        owner = np.repeat(np.arange(size), counts)
        big = np.zeros((size, d))
        np.add.at(big, owner, xi)
        split[sl] = small + big
        start += size
    return full @ A.T, split @ A.T


def verify_decomposition(
    spec: SubordinatorSpec,
    d: int,
    T: float,
    z_grid,
    N: int,
    rng=None,
    eps: float = DEFAULT_EPS,
    A=None,
) -> float:
    """Max over ``z_grid`` of the distance between the two empirical CFs of ``A W_{S_T}``."""
    if N < 1000:
        raise ValueError("N must be at least 1000")
    z = np.atleast_2d(np.asarray(z_grid, dtype=float))
    full, split = decomposition_samples(spec, d, T, N, rng, eps, A)
    return float(np.max(np.abs(_cf(full, z) - _cf(split, z))))
