"""Radial heat-kernel machinery in R^4.

For a radial function ``g`` on R^4 the heat evolution reduces to a one
dimensional integral against :func:`ring_kernel`,

    (T o g)(r, t) = int_0^inf K(r, s, t) g(s) ds,

    K = (4 pi t)^-2 s^3 |S^2| int_0^pi exp(-|r e1 - y|^2 / 4t) sin^2(theta) dtheta
      = s^3 exp(-(r - s)^2 / 4t) * ive(1, kappa) / (4 t^2 kappa),   kappa = r s / 2t.

Two evaluation paths are provided: an adaptive one built on QUADPACK for
single points, and a vectorised composite Gauss-Legendre rule for batches of
radii, which is what the Duhamel integrals use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "QuadratureError",
    "RadialFunction",
    "SpaceTimeSource",
    "GammaContext",
    "ring_kernel",
    "ring_kernel_theta",
    "heat_convolve_initial",
    "heat_convolve_batch",
    "heat_convolve_duhamel",
    "gamma_constants",
    "v_gamma",
    "eval_psi_star",
    "psi_star_origin_gamma2",
    "japanese",
]

# Gaussian factor exp(-x^2/4) drops below 1e-18 beyond |x| = 2 sqrt(ln 1e18)
GAUSS_CUT = 2.0 * math.sqrt(math.log(1e18))
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature misses its tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative error {achieved:.3e})")
        self.achieved = achieved


def japanese(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclass(frozen=True)
class RadialFunction:
    """Radial profile ``s -> func(s)`` with hints for the quadrature."""

    func: Callable[[np.ndarray], np.ndarray]
    domain_bound: float = math.inf
    decay_hint: Optional[float] = None
    breakpoints: Sequence[float] = ()

    def __call__(self, s):
        return self.func(s)


@dataclass(frozen=True)
class SpaceTimeSource:
    """Space-time radial source ``(s, time) -> func(s, time)`` for Duhamel integrals.

    ``support(time)`` bounds the spatial support and ``breakpoints(time)``
    lists radii where the source loses smoothness or changes scale.
    """

    func: Callable[[np.ndarray, float], np.ndarray]
    support: Callable[[float], float] = lambda time: math.inf
    breakpoints: Callable[[float], Sequence[float]] = lambda time: ()

    def __call__(self, s, time):
        return self.func(s, time)


def ring_kernel(r, s, t):
    """Weight ``K(r, s, t)`` so that the R^4 heat flow of radial g is ``int K g ds``."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("heat kernel needs t > 0")
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    kappa = r * s / (2.0 * t)
    return s**3 * np.exp(-((r - s) ** 2) / (4.0 * t)) * _ive1_over(kappa) / (4.0 * t * t)


def _ive1_over(kappa):
    """``exp(-kappa) I_1(kappa) / kappa`` with the kappa -> 0 limit 1/2."""
    kappa = np.asarray(kappa, dtype=float)
    small = kappa < 1e-6
    big = kappa > 1e8
    safe = np.where(small | big, 1.0, kappa)
    out = special.ive(1, safe) / safe
    # scipy's ive returns NaN for very large arguments; use the Hankel series
    kb = np.where(big, kappa, 1.0)
    asym = (1.0 - 0.375 / kb - 15.0 / (128.0 * kb * kb)) / (np.sqrt(2.0 * np.pi * kb) * kb)
    out = np.where(big, asym, out)
    return np.where(small, np.exp(-kappa) * (0.5 + kappa * kappa / 16.0), out)


def ring_kernel_theta(r, s, t):
    """Slow reference for :func:`ring_kernel` by direct angular quadrature."""
    def integrand(theta):
        return math.exp(-(r * r + s * s - 2.0 * r * s * math.cos(theta)) / (4.0 * t)) * math.sin(theta) ** 2

    ang, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=0.0, epsrel=1e-13, limit=200)
    return (4.0 * math.pi * t) ** -2 * s**3 * 4.0 * math.pi * ang


def _window(r: float, t: float, support: float):
    w = GAUSS_CUT * math.sqrt(t)
    return max(0.0, r - w), min(r + w, support)


def heat_convolve_initial(g, r: float, t: float, rtol: float = 1e-10) -> float:
    """Adaptive evaluation of ``(T o g)(r, t)`` for radial ``g``.

    The improper integral is truncated where the Gaussian factor falls below
    1e-18.  Raises :class:`QuadratureError` when QUADPACK cannot reach ``rtol``.
    """
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    support = getattr(g, "domain_bound", math.inf)
    lo, hi = _window(r, t, support)
    if hi <= lo:
        return 0.0
    sig = math.sqrt(t)
    pts = [r + k * sig for k in range(-12, 13)]
    pts += list(getattr(g, "breakpoints", ()))
    pts += list(np.geomspace(max(lo, 1e-3), hi, 12)) if hi > 1e-3 else []
    pts = sorted({p for p in pts if lo < p < hi})
    edges = [lo] + pts + [hi]

    def f(s):
        return float(ring_kernel(r, s, t) * g(s))

    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=max(rtol * 0.1, 1e-13), limit=200)
        total += val
        err += e
    if err > rtol * abs(total) + 1e-300 and err > 1e-15 * max(abs(total), 1e-300):
        raise QuadratureError("heat convolution did not converge", err / max(abs(total), 1e-300))
    return total


def _panel_rule(edges: np.ndarray):
    """Gauss-Legendre nodes/weights on the panels between sorted row edges."""
    a = edges[:, :-1]
    b = edges[:, 1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = mid[..., None] + half[..., None] * _GL_NODES
    weights = half[..., None] * _GL_WEIGHTS
    n = edges.shape[0]
    return nodes.reshape(n, -1), weights.reshape(n, -1)


def _batch_nodes(r: np.ndarray, t: float, support: float, extra: np.ndarray):
    sig = math.sqrt(t)
    w = GAUSS_CUT * sig
    lo = np.maximum(r - w, 0.0)
    hi = np.minimum(r + w, support)
    hi = np.maximum(hi, lo)
    kern = r[:, None] + sig * np.arange(-13, 14, dtype=float)[None, :]
    parts = [kern, lo[:, None], hi[:, None]]
    if extra.size:
        parts.append(np.broadcast_to(extra, (r.size, extra.size)))
    edges = np.concatenate(parts, axis=1)
    edges = np.clip(edges, lo[:, None], hi[:, None])
    edges.sort(axis=1)
    nodes, weights = _panel_rule(edges)
    return nodes, weights * ring_kernel(r[:, None], nodes, t)


def heat_convolve_batch(g, r, t: float) -> np.ndarray:
    """Fixed-rule evaluation of ``(T o g)(r, t)`` for an array of radii."""
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    support = getattr(g, "domain_bound", math.inf)
    extra = np.asarray(getattr(g, "breakpoints", ()), dtype=float)
    nodes, w = _batch_nodes(r, t, support, extra)
    return np.sum(w * g(nodes), axis=1)


def heat_convolve_duhamel(h: SpaceTimeSource, r, t: float, t_start: float,
                          tau_min: float = 1e-10, panel_width: float = 0.5) -> np.ndarray:
    """Duhamel integral ``int_{t_start}^t (T o h(., s))(r, t - s) ds``.

    The time integral is done in ``u = ln(t - s)`` with composite
    Gauss-Legendre panels, which clusters nodes geometrically at ``s -> t``.
    The last sliver ``t - s < tau_min`` is taken as ``tau_min * h(r, t)``.
    """
    if not t > t_start:
        raise ValueError("need t > t_start")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    u_hi = math.log(t - t_start)
    u_lo = min(math.log(tau_min), u_hi - 1.0)
    npanel = max(1, int(math.ceil((u_hi - u_lo) / panel_width)))
    uedges = np.linspace(u_lo, u_hi, npanel + 1)
    a, b = uedges[:-1], uedges[1:]
    unodes = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * _GL_NODES
    uweights = (0.5 * (b - a))[:, None] * _GL_WEIGHTS
    total = np.zeros_like(r)
    for u, wu in zip(unodes.ravel(), uweights.ravel()):
        tau = math.exp(u)
        s = t - tau
        support = h.support(s)
        extra = np.asarray(h.breakpoints(s), dtype=float)
        nodes, w = _batch_nodes(r, tau, support, extra)
        total += wu * tau * np.sum(w * h(nodes, s), axis=1)
    tau0 = math.exp(u_lo)
    total += tau0 * h(r, t)
    return total


@dataclass(frozen=True)
class GammaContext:
    """Regime data attached to the tail exponent gamma."""

    gamma: float
    C_gamma: float = field(init=False)
    regime: str = field(init=False)
    v_gamma_form: str = field(init=False)

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"tail exponent must exceed 1, got gamma={self.gamma}")
        g = self.gamma
        object.__setattr__(self, "C_gamma", gamma_constants(g)[0])
        object.__setattr__(self, "regime", "sub" if g < 2 else ("critical" if g == 2 else "super"))
        object.__setattr__(self, "v_gamma_form", "lt4" if g < 4 else ("eq4" if g == 4 else "gt4"))

    def v_gamma(self, t):
        return v_gamma(self.gamma, t)


def v_gamma(gamma: float, t):
    """Leading time decay of the heat flow of ``<y>^{-gamma}`` at the origin."""
    t = np.asarray(t, dtype=float)
    if gamma < 4:
        return t ** (-0.5 * gamma)
    if gamma == 4:
        return np.log1p(t) / (t * t)
    return 1.0 / (t * t)


def gamma_constants(gamma: float):
    """``(C_gamma, t -> v_gamma(t))`` from the closed Gamma/Beta reductions."""
    if not gamma > 1:
        raise ValueError(f"tail exponent must exceed 1, got gamma={gamma}")
    # (4 pi)^-2 |S^3| = 1/8
    if gamma < 4:
        C = 0.125 * 2.0 ** (3.0 - gamma) * math.gamma(0.5 * (4.0 - gamma))
    elif gamma == 4:
        C = 1.0 / 16.0
    else:
        C = 0.0625 * math.exp(math.lgamma(0.5 * gamma - 2.0) - math.lgamma(0.5 * gamma))
    return C, (lambda t: v_gamma(gamma, t))


def _tail_function(gamma: float) -> RadialFunction:
    edges = tuple(np.geomspace(0.05, 1e7, 30))
    return RadialFunction(lambda s: (1.0 + np.asarray(s) ** 2) ** (-0.5 * gamma),
                          decay_hint=gamma, breakpoints=edges)


def eval_psi_star(gamma: float, r, t, adaptive: bool = False):
    """``psi_*(r, t)``: heat flow in R^4 of ``<y>^{-gamma}``; ``Psi_* = r psi_*``.

    ``t = 0`` returns the initial profile.  Arrays of radii use the batch
    rule unless ``adaptive`` is set.
    """
    g = _tail_function(gamma)
    if t == 0:
        return g(np.asarray(r, dtype=float))
    if np.ndim(r) == 0:
        if adaptive:
            return heat_convolve_initial(g, float(r), t)
        return float(heat_convolve_batch(g, np.array([float(r)]), t)[0])
    r = np.asarray(r, dtype=float)
    if adaptive:
        return np.array([heat_convolve_initial(g, float(x), t) for x in r.ravel()]).reshape(r.shape)
    return heat_convolve_batch(g, r.ravel(), t).reshape(r.shape)


def psi_star_origin_gamma2(t: float) -> float:
    """Closed form of ``psi_*(0, t)`` for gamma = 2.

    With u = s^2 the radial integral becomes an exponential integral:
    ``psi_* = (4t - exp(1/4t) E1(1/4t)) / (16 t^2)``.
    """
    x = 1.0 / (4.0 * t)
    return (4.0 * t - special.exp1(x) * math.exp(x)) / (16.0 * t * t)
