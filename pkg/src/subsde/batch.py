"""Batched Monte Carlo over many independent clock and noise paths.

Paths are generated in fixed-size chunks; chunk ``k`` draws everything from the
``k``-th child of the root SeedSequence.  Chunks may run on a thread pool but
results are assembled in chunk order, so output is identical for any thread
count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .flow import SdeModel, propagate
from .subordinator import (
    CHUNK,
    DEFAULT_EPS,
    SubordinatorSpec,
    chunk_streams,
    sample_jump_sizes,
    truncated_first_moment,
)


@dataclass
class BatchResult:
    X: np.ndarray  # (N, d) terminal states
    X_obs: Optional[np.ndarray]  # (N, n_obs, d) states at observation times
    C: Optional[np.ndarray]  # (N, d, d) reduced covariance int K A A* K* dS
    J: Optional[np.ndarray]  # (N, d, d) terminal Jacobian
    clock: np.ndarray  # (N,) terminal clock value S_T
    n_jumps: np.ndarray  # (N,) clock jumps of size >= eps


def chunk_noise(spec, horizon, n, d, rng, eps=DEFAULT_EPS, dt_max=None, obs_times=()):
    """Padded per-path grids for ``n`` paths.

    Returns ``h`` (cell lengths), ``dL`` (increments), ``jumps`` (clock jump at
    each cell end), ``obs_code`` (index of the observation time ending at each
    cell, or -1) and the jump counts.
    """
    if dt_max is None:
        dt_max = horizon / 256
    m = max(1, math.ceil(horizon / dt_max - 1e-12))
    mesh = np.linspace(0.0, horizon, m + 1)[1:]
    obs = np.asarray(obs_times, dtype=float)
    r = truncated_first_moment(spec, eps)
    counts = rng.poisson(spec.tail_mass(eps) * horizon, size=n) if horizon > 0 else np.zeros(n, int)
    kmax = int(counts.max()) if n else 0
    jt = horizon * (1.0 - rng.random((n, kmax)))
    valid = np.arange(kmax)[None, :] < counts[:, None]
    sizes = np.zeros((n, kmax))
    sizes[valid] = sample_jump_sizes(spec, int(counts.sum()), eps, math.inf, rng)
    jt[~valid] = horizon
    # mesh first, then observations, then jumps: a stable sort keeps an
    # observation after a coinciding mesh point
    times = np.concatenate(
        [np.broadcast_to(mesh, (n, m)), np.broadcast_to(obs, (n, obs.size)), jt], axis=1
    )
    jumps = np.concatenate([np.zeros((n, m + obs.size)), sizes], axis=1)
    code = np.concatenate(
        [np.full((n, m), -1), np.broadcast_to(np.arange(obs.size), (n, obs.size)), np.full((n, kmax), -1)],
        axis=1,
    )
    order = np.argsort(times, axis=1, kind="stable")
    times = np.take_along_axis(times, order, axis=1)
    jumps = np.take_along_axis(jumps, order, axis=1)
    code = np.take_along_axis(code, order, axis=1)
    h = np.diff(np.concatenate([np.zeros((n, 1)), times], axis=1), axis=1)
    clock = r * h + jumps
    dL = np.sqrt(clock)[:, :, None] * rng.standard_normal(clock.shape + (d,))
    return h, dL, jumps, code, counts


def simulate_batch(
    model: SdeModel,
    spec: SubordinatorSpec,
    x0,
    horizon: float,
    N: int,
    seed=None,
    *,
    eps: float = DEFAULT_EPS,
    dt_max: Optional[float] = None,
    observe: Sequence[float] = (),
    reduced: bool = False,
    flow: bool = False,
    threads: int = 1,
    chunk: int = CHUNK,
) -> BatchResult:
    """Simulate ``N`` independent paths of ``dX = b(X) dt + A dL`` to ``horizon``.

    ``x0`` is either one starting point or an ``(N, d)`` array of starting
    points.  With ``reduced`` the matrices ``C_T = int K A A* K* dS`` are
    accumulated alongside.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    d = model.d
    x0 = np.asarray(x0, dtype=float)
    per_path = x0.ndim == 2
    if per_path and x0.shape != (N, d):
        raise ValueError(f"x0 must have shape ({N}, {d})")
    obs = np.asarray(observe, dtype=float)
    if obs.size and (np.any(obs < 0) or np.any(obs > horizon)):
        raise ValueError("observation times must lie in [0, horizon]")
    streams = chunk_streams(seed, N, chunk)
    starts = np.cumsum([0] + [s for s, _ in streams])
    r = truncated_first_moment(spec, eps)

    def work(k):
        size, gen = streams[k]
        h, dL, jumps, code, counts = chunk_noise(spec, horizon, size, d, gen, eps, dt_max, obs)
        start = x0[starts[k] : starts[k] + size] if per_path else x0
        out = propagate(
            model, start, h, dL, jumps, r, flow=flow, reduced=reduced, obs_code=code, n_obs=obs.size
        )
        S = r * horizon + jumps.sum(axis=1)
        return out, S, counts

    if threads > 1 and len(streams) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(streams))))
    else:
        results = [work(k) for k in range(len(streams))]

    def cat(key):
        if results and results[0][0][key] is not None:
            return np.concatenate([res[0][key] for res in results])
        return None

    return BatchResult(
        X=cat("X") if results else np.zeros((0, d)),
        X_obs=cat("X_obs"),
        C=cat("C"),
        J=cat("J") if (flow or reduced) else None,
        clock=np.concatenate([res[1] for res in results]) if results else np.zeros(0),
        n_jumps=np.concatenate([res[2] for res in results]) if results else np.zeros(0, int),
    )
