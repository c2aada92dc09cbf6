"""Subordinator Lévy measures, their analytic functionals, and clock-path sampling.

A subordinator is described by its Lévy measure ``nu_S`` on ``(0, inf)``.  Two
kinds are supported: the ``stable`` family with density ``c * u**(-1-beta)``,
for which every functional has a closed form, and ``custom`` densities, which
go through adaptive quadrature and Pareto-envelope rejection sampling.

Clock paths are simulated by truncation: jumps of size at least ``eps`` are
sampled exactly (compound Poisson), jumps below ``eps`` are replaced by the
deterministic drift ``int_0^eps u nu_S(du)`` per unit time.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate

DEFAULT_EPS = 1e-4

# Chunk size used by every batched sampler; seeds are split per chunk, so
# results do not depend on the number of worker threads.
CHUNK = 8192


def seed_sequence(seed) -> np.random.SeedSequence:
    """Normalize an int, SeedSequence or Generator into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(seed.integers(0, 2**63 - 1, size=4).tolist())
    if seed is None:
        return np.random.SeedSequence()
    return np.random.SeedSequence(int(seed))


def chunk_streams(seed, n: int, chunk: int = CHUNK):
    """Split ``n`` paths into fixed-size chunks with independent generators.

    Chunk ``k`` always receives the ``k``-th child of the root SeedSequence,
    which makes batched results reproducible for any thread count.
    """
    root = seed_sequence(seed)
    sizes = [chunk] * (n // chunk)
    if n % chunk:
        sizes.append(n % chunk)
    children = root.spawn(len(sizes))
    return [(size, np.random.default_rng(child)) for size, child in zip(sizes, children)]


def _ensure_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SubordinatorSpec:
    """Lévy measure of a subordinator.

    Attributes
    ----------
    kind : {"stable", "custom"}
    beta : float
        Stability index for the stable kind (``nan`` for custom densities).
    c : float
        Intensity scale for the stable kind.
    density : callable, optional
        Vectorized evaluator ``u -> d nu_S / du`` for the custom kind.
    envelope_index : float
        Pareto index of the rejection envelope used for custom sampling.
    """

    kind: str
    beta: float = math.nan
    c: float = 1.0
    density: Optional[Callable] = field(default=None, compare=False, repr=False)
    envelope_index: float = 0.5
    _envelope_const: float = field(default=math.nan, compare=False, repr=False)

    def levy_density(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "stable":
            with np.errstate(divide="ignore"):
                return self.c * u ** (-1.0 - self.beta)
        return np.asarray(self.density(u), dtype=float)

    def tail_mass(self, a: float, b: float = math.inf) -> float:
        """``nu_S([a, b))`` for ``0 < a <= b``."""
        if b <= a:
            return 0.0
        if self.kind == "stable":
            upper = 0.0 if math.isinf(b) else b ** (-self.beta)
            return self.c / self.beta * (a ** (-self.beta) - upper)
        val, _ = _quad(self.density, a, b)
        return val

    def truncated_second_moment(self, eps: float) -> float:
        """``int_0^eps u^2 nu_S(du)``: variance rate dropped by truncation."""
        if eps <= 0:
            return 0.0
        if self.kind == "stable":
            return self.c * eps ** (2.0 - self.beta) / (2.0 - self.beta)
        val, _ = _quad(lambda u: u * u * self.density(u), 0.0, eps)
        return val


def _quad(fn, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(lambda u: float(fn(u)), a, b, limit=200, **kw)
        except integrate.IntegrationWarning as exc:
            raise ArithmeticError(f"quadrature did not converge on [{a}, {b}]: {exc}") from exc


def make_stable_spec(beta: float, c: float = 1.0) -> SubordinatorSpec:
    """Stable subordinator with Lévy density ``c * u**(-1-beta)``."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1) for a subordinator, got {beta}")
    if not c > 0.0:
        raise ValueError(f"c must be positive, got {c}")
    return SubordinatorSpec(kind="stable", beta=float(beta), c=float(c))


def make_custom_spec(density: Callable, envelope_index: float = 0.5) -> SubordinatorSpec:
    """Subordinator with an arbitrary Lévy density.

    The density must satisfy ``int (1 ^ u) nu_S(du) < inf``; this is checked by
    quadrature.  Sampling uses a Pareto envelope ``M * u**(-1-envelope_index)``
    whose constant is fitted on a log grid; the density must decay at least as
    fast as the envelope.
    """
    if not 0.0 < envelope_index:
        raise ValueError("envelope_index must be positive")
    try:
        small, _ = _quad(lambda u: u * density(u), 0.0, 1.0)
        large, _ = _quad(density, 1.0, math.inf)
    except ArithmeticError as exc:
        raise ValueError(f"density is not a subordinator Lévy measure: {exc}") from exc
    if not (math.isfinite(small) and math.isfinite(large)):
        raise ValueError("int (1 ^ u) nu_S(du) diverges")
    grid = np.logspace(-12, 8, 2001)
    ratio = np.asarray(density(grid), dtype=float) * grid ** (1.0 + envelope_index)
    if np.any(ratio < 0) or not np.all(np.isfinite(ratio)):
        raise ValueError("density must be finite and nonnegative on (0, inf)")
    if ratio[-1] > ratio[-101] * (1 + 1e-9):  # still growing over the last decade
        raise ValueError("density decays slower than the Pareto envelope; lower envelope_index")
    return SubordinatorSpec(
        kind="custom",
        density=density,
        envelope_index=float(envelope_index),
        _envelope_const=1.05 * float(ratio.max()),
    )


def truncated_first_moment(spec: SubordinatorSpec, eps: float) -> float:
    """``int_0^eps u nu_S(du)``; closed form for the stable kind."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return 0.0
    if spec.kind == "stable":
        return spec.c * eps ** (1.0 - spec.beta) / (1.0 - spec.beta)
    val, _ = _quad(lambda u: u * spec.density(u), 0.0, eps)
    return val


class Con2Report(NamedTuple):
    ratios: np.ndarray
    limit: float
    converged: bool


def check_con2(spec: SubordinatorSpec, theta: float, eps_grid: Sequence[float]) -> Con2Report:
    """Ratios ``eps**-(1-2 theta) * int_0^eps u nu_S(du)`` along a decreasing grid.

    The sequence is declared converged when the last three ratios differ
    successively by less than 1% (relative); the fitted limit is the last ratio.
    """
    if not 0.0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    eps = np.asarray(eps_grid, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_grid must be positive and strictly decreasing")
    ratios = np.array([truncated_first_moment(spec, e) * e ** (-(1.0 - 2.0 * theta)) for e in eps])
    converged = False
    if ratios.size >= 3:
        tail = ratios[-3:]
        rel = np.abs(np.diff(tail)) / np.maximum(np.abs(tail[1:]), 1e-300)
        converged = bool(np.all(rel < 0.01) and tail[-1] > 0)
    return Con2Report(ratios=ratios, limit=float(ratios[-1]), converged=converged)


def phi(spec: SubordinatorSpec, lam: float, f_sup: float = 1.0) -> float:
    """Exponent ``(lam/2) * int_0^{log 2/(lam f_sup)} u nu_S(du)`` of the clock tail bound."""
    if lam <= 0 or f_sup <= 0:
        raise ValueError("lam and f_sup must be positive")
    return 0.5 * lam * truncated_first_moment(spec, math.log(2.0) / (lam * f_sup))


def big_jump_rate(spec: SubordinatorSpec) -> float:
    """``nu_S([1, inf))``, the rate of clock jumps of size at least one."""
    rate = spec.tail_mass(1.0)
    if not math.isfinite(rate):
        raise ValueError("Lévy measure has infinite mass on [1, inf)")
    return rate


# --------------------------------------------------------------------------
# sampling


def sample_jump_sizes(spec: SubordinatorSpec, n: int, lo: float, hi: float, rng) -> np.ndarray:
    """Draw ``n`` jump sizes from ``nu_S`` restricted to ``[lo, hi)`` and normalized."""
    rng = _ensure_rng(rng)
    if n == 0:
        return np.empty(0)
    if spec.kind == "stable":
        b = spec.beta
        u = 1.0 - rng.random(n)  # in (0, 1]
        top = 0.0 if math.isinf(hi) else hi ** (-b)
        return (top + u * (lo ** (-b) - top)) ** (-1.0 / b)
    return _rejection_sizes(spec, n, lo, hi, rng)


def _rejection_sizes(spec, n, lo, hi, rng):
    g = spec.envelope_index
    const = spec._envelope_const
    out = np.empty(n)
    filled = 0
    top = 0.0 if math.isinf(hi) else hi ** (-g)
    while filled < n:
        m = max(2 * (n - filled), 64)
        u = (top + (1.0 - rng.random(m)) * (lo ** (-g) - top)) ** (-1.0 / g)
        accept = rng.random(m) * const * u ** (-1.0 - g) <= spec.levy_density(u)
        got = u[accept][: n - filled]
        out[filled : filled + got.size] = got
        filled += got.size
    return out


@dataclass(frozen=True)
class SubordinatorPath:
    """One realized clock path: ordered jumps plus the small-jump drift rate."""

    horizon: float
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    drift_rate: float
    cut: float
    dropped_variance: float = 0.0  # variance of the sub-cut fluctuation over the horizon

    def __post_init__(self):
        t = self.jump_times
        if t.size:
            if np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > self.horizon:
                raise ValueError("jump times must be strictly increasing in (0, T]")
            if np.any(self.jump_sizes < self.cut):
                raise ValueError("recorded jumps must be at least the cut level")

    def value(self, t):
        """``S_t = r_eps * t + sum of jumps up to t`` (right-continuous)."""
        t = np.asarray(t, dtype=float)
        csum = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        idx = np.searchsorted(self.jump_times, t, side="right")
        return self.drift_rate * t + csum[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "jump_size"])
        for t, s in zip(self.jump_times, self.jump_sizes):
            w.writerow([repr(float(t)), repr(float(s))])
        return buf.getvalue()


def sample_path(spec: SubordinatorSpec, horizon: float, eps: float = DEFAULT_EPS, rng=None) -> SubordinatorPath:
    """Sample a truncated clock path on ``[0, horizon]``.

    Jumps of size at least ``eps`` form a compound Poisson process with rate
    ``nu_S([eps, inf))``; smaller jumps are replaced by drift at rate
    ``int_0^eps u nu_S(du)``.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    rng = _ensure_rng(rng)
    rate = spec.tail_mass(eps)
    n = rng.poisson(rate * horizon) if horizon > 0 else 0
    times = np.sort(horizon * (1.0 - rng.random(n)))
    sizes = sample_jump_sizes(spec, n, eps, math.inf, rng)
    return SubordinatorPath(
        horizon=float(horizon),
        jump_times=times,
        jump_sizes=sizes,
        drift_rate=truncated_first_moment(spec, eps),
        cut=float(eps),
        dropped_variance=horizon * spec.truncated_second_moment(eps),
    )


def sample_clock_totals(
    spec: SubordinatorSpec,
    horizon: float,
    n: int,
    rng,
    eps: float = DEFAULT_EPS,
    upper: float = math.inf,
) -> np.ndarray:
    """Terminal values ``S_T`` of ``n`` independent truncated clocks.

    With ``upper`` finite, only jumps in ``[eps, upper)`` are kept, which gives
    the clock with Lévy measure ``1_{(0, upper)} nu_S``.
    """
    rng = _ensure_rng(rng)
    if horizon == 0 or n == 0:
        return np.zeros(n)
    counts = rng.poisson(spec.tail_mass(eps, upper) * horizon, size=n)
    sizes = sample_jump_sizes(spec, int(counts.sum()), eps, upper, rng)
    owner = np.repeat(np.arange(n), counts)
    total = np.bincount(owner, weights=sizes, minlength=n)
    return total + truncated_first_moment(spec, eps) * horizon


def sample_big_jump_displacement(spec: SubordinatorSpec, d: int, rng, size: Optional[int] = None) -> np.ndarray:
    """Displacement of a clock jump of size at least one, seen through Brownian motion.

    Draws ``s`` from ``nu_S`` restricted to ``[1, inf)`` and returns a centered
    Gaussian vector with covariance ``s * I``.  With ``size`` given, returns an
    array of shape ``(size, d)``.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    rng = _ensure_rng(rng)
    m = 1 if size is None else int(size)
    s = sample_jump_sizes(spec, m, 1.0, math.inf, rng)
    xi = np.sqrt(s)[:, None] * rng.standard_normal((m, d))
    return xi[0] if size is None else xi


# --------------------------------------------------------------------------
# key=value serialization


def spec_to_config(spec: SubordinatorSpec, eps: float = DEFAULT_EPS) -> str:
    if spec.kind != "stable":
        raise ValueError("only stable specs can be serialized; custom densities are code")
    return f"kind=stable\nbeta={spec.beta!r}\nc={spec.c!r}\neps={float(eps)!r}\n"


def spec_from_config(text: str) -> tuple[SubordinatorSpec, float]:
    fields = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed line {line!r}")
        fields[key.strip()] = value.strip()
    for key in ("kind", "beta", "c"):
        if key not in fields:
            raise ValueError(f"missing field {key!r}")
    if fields["kind"] != "stable":
        raise ValueError(f"unsupported kind {fields['kind']!r}")
    eps = float(fields.get("eps", DEFAULT_EPS))
    return make_stable_spec(float(fields["beta"]), float(fields["c"])), eps
