"""Closed-form and quadrature oracles for stable-driven linear systems.

Everything here is deterministic: characteristic functions of
Ornstein-Uhlenbeck systems driven by rotationally invariant stable noise, the
stable calibration of a subordinated Brownian motion, and integrals against the
Lévy measure ``nu_L`` computed through its Gaussian-mixture representation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, linalg, optimize, special

from .subordinator import SubordinatorSpec, truncated_first_moment


def stable_calibration(spec: SubordinatorSpec) -> tuple[float, float]:
    """``(alpha, c_L)`` such that ``E exp(i z.W_{S_t}) = exp(-t c_L |z|**alpha)``."""
    if spec.kind != "stable":
        raise ValueError("stable calibration needs a stable subordinator")
    b = spec.beta
    return 2.0 * b, spec.c * special.gamma(1.0 - b) / (b * 2.0**b)


@dataclass(frozen=True)
class OuSystem:
    """``dX = B X dt + A dL`` with ``L`` of symbol ``c_L |z|**alpha``."""

    B: np.ndarray
    A: np.ndarray
    alpha: float
    c_L: float = 1.0

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if B.shape != A.shape or B.shape[0] != B.shape[1]:
            raise ValueError("B and A must be square matrices of equal size")
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "A", A)

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @classmethod
    def from_spec(cls, B, A, spec: SubordinatorSpec) -> "OuSystem":
        alpha, c_L = stable_calibration(spec)
        return cls(B, A, alpha, c_L)


def _strict_quad(fn, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(fn, a, b, **kw)[0]
        except integrate.IntegrationWarning as exc:
            raise ArithmeticError(f"quadrature tolerance not met: {exc}") from exc


def ou_exponent(sys: OuSystem, t: float, z) -> float:
    """``int_0^t |z* e^{sB} A|**alpha ds`` by adaptive quadrature."""
    z = np.asarray(z, dtype=float)
    if not np.any(z):
        return 0.0

    def f(s):
        return np.linalg.norm(z @ linalg.expm(s * sys.B) @ sys.A) ** sys.alpha

    return _strict_quad(f, 0.0, t, limit=400, epsabs=1e-13, epsrel=1e-11)


def ou_char_function(sys: OuSystem, t: float, z, x0=None):
    """Characteristic function of ``X_t - e^{tB} x0`` at ``z``.

    ``z`` may be one frequency ``(d,)`` or a stack ``(k, d)``.  With ``x0``
    given, the phase ``exp(i z . e^{tB} x0)`` of the deterministic part is
    included, giving the CF of ``X_t`` itself.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zs = np.atleast_2d(z)
    vals = np.array([math.exp(-sys.c_L * ou_exponent(sys, t, zz)) for zz in zs], dtype=complex)
    if x0 is not None:
        mean = linalg.expm(t * sys.B) @ np.asarray(x0, dtype=float)
        vals = vals * np.exp(1j * zs @ mean)
    return vals[0] if single else vals


# --------------------------------------------------------------------------
# directional decay rate and the moment integral


def _gl_panels(a, b, panels, nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


class _Propagators:
    """``e^{sB} A`` on a composite Gauss-Legendre grid of ``[0, t]``."""

    def __init__(self, sys: OuSystem, t: float, panels: int = 64, nodes: int = 8):
        self.s, self.w = _gl_panels(0.0, t, panels, nodes)
        self.M = np.stack([linalg.expm(s * sys.B) @ sys.A for s in self.s])
        self.alpha = sys.alpha

    def rate(self, a):
        """``int_0^t |a e^{sB} A|**alpha ds`` for rows of ``a`` (..., d)."""
        rows = np.einsum("...i,kij->...kj", a, self.M)
        return np.linalg.norm(rows, axis=-1) ** self.alpha @ self.w


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def decay_rate(sys: OuSystem, t: float, seed: int = 0) -> tuple[float, np.ndarray]:
    """``inf_{|a|=1} int_0^t |a e^{sB} A|**alpha ds`` and a minimizing direction.

    Starts from the eigenvectors of the quadratic Gramian (which contain the
    exact null direction when the Kalman rank is deficient), random
    directions, and for ``d = 2`` a fine angular grid, then polishes the best
    candidates with Nelder-Mead.
    """
    d = sys.d
    if t == 0:
        return 0.0, np.eye(d)[0]
    prop = _Propagators(sys, t)
    if d == 1:
        return float(prop.rate(np.ones(1))), np.ones(1)
    gram = np.einsum("kij,klj,k->il", prop.M, prop.M, prop.w)
    _, vecs = np.linalg.eigh(gram)
    cands = [vecs.T, _unit(np.random.default_rng(seed).standard_normal((64, d)))]
    if d == 2:
        ang = np.linspace(0.0, np.pi, 721)
        cands.append(np.stack([np.cos(ang), np.sin(ang)], axis=1))
    cands = np.concatenate(cands)
    vals = prop.rate(cands)
    best_val, best_dir = float(vals.min()), cands[int(vals.argmin())]
    for k in np.argsort(vals)[:3]:
        res = optimize.minimize(
            lambda v: prop.rate(_unit(v)), cands[k], method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000},
        )
        if res.fun < best_val:
            best_val, best_dir = float(res.fun), _unit(res.x)
    return max(best_val, 0.0), best_dir


def _directions(d: int, n: int):
    """Quadrature directions on the unit sphere and the sphere's area."""
    area = 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.full(2, 0.5 * area)
    if d == 2:
        ang = np.arange(n) * (2.0 * np.pi / n)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(n, area / n)
    from scipy.stats import qmc

    pts = qmc.Sobol(d, scramble=True, seed=7).random(n)
    dirs = _unit(special.ndtri(np.clip(pts, 1e-12, 1 - 1e-12)))
    return dirs, np.full(n, area / n)


class MomentIntegral(NamedTuple):
    value: float  # int_{|z|<=R} |z|^m |CF(z)| dz
    tail_bound: float  # bound on the same integral over |z| > R
    decay_rate: float  # inf over unit a of int_0^t |a e^{sB} A|^alpha ds
    radius: float
    degenerate: bool  # decay rate numerically zero: integrability not guaranteed


def smoothness_moment_integral(
    sys: OuSystem, t: float, m: float, R: Optional[float] = None, n_dir: int = 1024
) -> MomentIntegral:
    """Moment integral ``int_{|z|<=R} |z|**m |E exp(i z.Z_t)| dz`` of the OU noise part.

    Along each direction ``theta`` the modulus is ``exp(-c_L kappa(theta) r**alpha)``,
    so the radial integral is an incomplete gamma function and only the
    angular average needs quadrature.  The tail beyond ``R`` is bounded with
    the smallest ``kappa`` (the decay rate).  When ``R`` is omitted it is chosen
    so that the tail bound is below ``1e-6`` of the bulk.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    if R is not None and R <= 0:
        raise ValueError("R must be positive")
    d = sys.d
    rate, _ = decay_rate(sys, t)
    prop = _Propagators(sys, t)
    scale = float(np.max(np.linalg.norm(prop.M, axis=(-2, -1)))) if t > 0 else 0.0
    degenerate = t == 0 or (rate / t) ** (1.0 / sys.alpha) <= 1e-7 * max(scale, 1e-300)
    dirs, wts = _directions(d, n_dir)
    kappa = sys.c_L * prop.rate(dirs)
    p = (m + d) / sys.alpha

    def bulk(radius):
        with np.errstate(divide="ignore", invalid="ignore"):
            x = kappa * radius**sys.alpha
            radial = np.where(
                kappa > 0,
                special.gamma(p) * special.gammainc(p, x) / (sys.alpha * kappa**p),
                radius ** (m + d) / (m + d),
            )
        return float(radial @ wts)

    area = float(wts.sum())

    def tail(radius):
        if degenerate:
            return math.inf
        k = sys.c_L * rate
        return area * special.gamma(p) * special.gammaincc(p, k * radius**sys.alpha) / (sys.alpha * k**p)

    if R is None:
        if degenerate:
            R = 10.0
        else:
            full = bulk(math.inf)
            lo, hi = 1e-3, 1.0
            while tail(hi) > 1e-6 * full:
                hi *= 2.0
            R = optimize.brentq(lambda r: math.log(tail(r)) - math.log(1e-6 * full), lo, hi) if tail(lo) > 1e-6 * full else lo
    return MomentIntegral(bulk(R), tail(R), rate, float(R), bool(degenerate))


# --------------------------------------------------------------------------
# integrals against the Lévy measure of the subordinated Brownian motion


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _dyadic_nodes(lo_exp: int, hi_exp: int):
    edges = 2.0 ** np.arange(lo_exp, hi_exp + 1, dtype=float)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    return (mid + half * _GL_X).ravel(), (half * _GL_W).ravel()


def mixture_integral(spec: SubordinatorSpec, G: Callable, lo_exp: int = -40, hi_exp: int = 40):
    """``int_0^inf G(s) nu_S(ds)`` for ``G(s) = O(s)`` at zero.

    ``G`` maps an array of ``k`` clock values to an array with leading axis
    ``k``.  Dyadic panels from ``2**lo_exp`` to ``2**hi_exp`` carry 12-point
    Gauss-Legendre rules; below the first panel ``G(s) ~ s G'(0)`` is used
    with the exact truncated first moment, above the last panel ``G`` is
    frozen at its last value against the exact tail mass.
    """
    s, w = _dyadic_nodes(lo_exp, hi_exp)
    vals = np.asarray(G(s))
    wts = w * spec.levy_density(s)
    total = np.tensordot(wts, vals, axes=(0, 0))
    s_lo, s_hi = 2.0**lo_exp, 2.0**hi_exp
    ends = np.asarray(G(np.array([s_lo, s_hi / 1024.0, s_hi])))
    total = total + ends[0] / s_lo * truncated_first_moment(spec, s_lo)
    total = total + ends[2] * spec.tail_mass(s_hi)
    growth = np.max(np.abs(ends[2])) / max(np.max(np.abs(ends[1])), 1e-300)
    # growth matching the tail decay over the last 1024x makes the integral diverge
    decay = spec.tail_mass(s_hi / 1024.0) / spec.tail_mass(s_hi)
    last_panel = np.tensordot(wts[-12:], vals[-12:], axes=(0, 0))
    if growth > 0.9 * decay and np.max(np.abs(last_panel)) > 1e-8 * max(np.max(np.abs(total)), 1e-300):
        raise ArithmeticError("tail divergence: the integrand grows too fast against nu_L")
    return total


def gauss_hermite_mean(g: Callable, d: int, s, n: Optional[int] = None):
    """``E g(sqrt(s) Z)`` for ``Z ~ N(0, I_d)`` by a product Gauss-Hermite rule.

    Accurate for smooth, slowly oscillating ``g``; oscillatory integrands at
    large ``s`` call for a closed-form Gaussian mean instead.
    """
    if n is None:
        n = {1: 64, 2: 32, 3: 14}.get(d, 8)
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g_.ravel() for g_ in grids], axis=-1)
    wts = np.ones(pts.shape[0])
    for k in range(d):
        wts = wts * w[np.meshgrid(*([np.arange(n)] * d), indexing="ij")[k].ravel()]
    s = np.asarray(s, dtype=float)
    y = np.sqrt(s)[..., None, None] * pts
    return np.asarray(g(y)) @ wts


def levy_quadrature(spec: SubordinatorSpec, d: int, g: Callable, gaussian_mean: Optional[Callable] = None) -> float:
    """``int g(y) nu_L(dy)`` through ``int_0^inf E g(W_s) nu_S(ds)``.

    Parameters
    ----------
    spec : SubordinatorSpec
    d : int
    g : callable
        Even test function, vectorized over ``(..., d)``, with
        ``|g(y)| <= C (1 ^ |y|**2)`` near the origin.
    gaussian_mean : callable, optional
        Closed form ``s -> E g(sqrt(s) Z)``; a Gauss-Hermite rule is used
        otherwise.
    """
    if gaussian_mean is None:
        G = lambda s: gauss_hermite_mean(g, d, s)  # noqa: E731
    else:
        G = lambda s: np.asarray(gaussian_mean(s), dtype=float)  # noqa: E731
    return float(mixture_integral(spec, G))
