"""Elliptic corrector ``Phi_e`` by variation of parameters.

The profile solves ``L Phi_e = H`` with
``L = d_rr + (1/rho) d_r - (rho^4 - 6 rho^2 + 1)/(rho^2 (rho^2+1)^2)`` and

    Phi_e(rho) = Zt(rho) int_0^rho H Z x dx - Z(rho) int_0^rho H Zt x dx.

The source ``H`` is the projected right-hand side built from
``phi + psi_*`` and the orthogonality functional ``M[mu]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .heat4d import GammaContext
from .kernels import apply_linearized_L, eval_cutoff, eval_kernels_ZZt

__all__ = [
    "CorrectionProfile",
    "projection_denominator",
    "projection_denominator_gl",
    "build_Htilde",
    "eval_M",
    "solve_Phi_e",
    "residual_check",
    "time_derivative",
    "refine_mu_bar0",
]

RHO_MIN = 1e-4
PER_DECADE = 2000
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _as_array_fn(f: Callable) -> Callable:
    """Wrap a possibly scalar-only callable so it accepts arrays."""
    def g(x):
        x = np.asarray(x, dtype=float)
        try:
            out = np.asarray(f(x), dtype=float)
            if out.shape == x.shape:
                return out
            return np.broadcast_to(out, x.shape).copy()
        except (TypeError, ValueError):
            return np.vectorize(lambda s: float(f(s)))(x)
    return g


def _denominator_integrand(x):
    Z = x / (x * x + 1.0)
    return eval_cutoff(x) * Z * Z * x


def projection_denominator(rtol: float = 1e-13) -> float:
    """``int_0^3 eta(x) Z(x)^2 x dx`` by adaptive quadrature, split at the cutoff knots."""
    total = 0.0
    for a, b in ((0.0, 1.0), (1.0, 2.0), (2.0, 3.0)):
        val, _ = integrate.quad(lambda x: float(_denominator_integrand(x)), a, b,
                                epsabs=0.0, epsrel=rtol, limit=200)
        total += val
    return total


def projection_denominator_gl(n: int = 64) -> float:
    """Same integral by fixed ``n``-point Gauss-Legendre on each smooth piece."""
    x, w = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for a, b in ((0.0, 1.0), (1.0, 2.0)):
        xs = 0.5 * (a + b) + 0.5 * (b - a) * x
        total += 0.5 * (b - a) * float(np.sum(w * _denominator_integrand(xs)))
    return total


_DENOM: Optional[float] = None


def _denominator() -> float:
    global _DENOM
    if _DENOM is None:
        _DENOM = projection_denominator()
    return _DENOM


def build_Htilde(ctx: GammaContext, mu_bar0: float, t: float, phi_plus_psi: Callable,
                 M_value: float) -> Callable:
    """Projected source ``H(rho)`` of the elliptic corrector.

    ``phi_plus_psi`` is evaluated at the inner variable ``rho``; it stands for
    ``(phi + psi_*)(mu_bar0 rho, t)``.  With ``M_value = eval_M(...)`` the
    source is orthogonal to ``Z`` in ``L^2(rho d rho)``.
    """
    f = _as_array_fn(phi_plus_psi)
    mu = float(mu_bar0)
    sq = math.sqrt(t)
    coef = mu * float(M_value) / _denominator()

    def H(rho):
        rho = np.asarray(rho, dtype=float)
        q = rho * rho + 1.0
        cut = eval_cutoff(mu * rho / sq)
        main = np.zeros_like(rho)
        live = cut != 0
        if np.any(live):
            rl = rho[live]
            main[live] = mu * cut[live] * (-8.0 * rl / q[live] ** 2) * f(rl)
        proj = coef * eval_cutoff(rho) * rho / q
        return main + proj

    H.support = 2.0 * sq / mu
    return H


def eval_M(ctx: GammaContext, mu: float, t: float, phi_plus_psi: Callable,
           rtol: float = 1e-10) -> float:
    """Orthogonality functional ``int eta(mu rho/sqrt t) 8 rho^3/(rho^2+1)^3 (phi+psi_*) d rho``.

    ``phi_plus_psi`` takes the inner variable ``rho``.  The integral is
    taken in ``ln rho``; the cutoff makes the support finite.
    """
    f = _as_array_fn(phi_plus_psi)
    sq = math.sqrt(t)
    rho_in = sq / mu
    rho_out = 2.0 * rho_in

    def integrand(u):
        rho = math.exp(u)
        w = 8.0 * rho**4 / (rho * rho + 1.0) ** 3
        return w * float(eval_cutoff(mu * rho / sq)) * float(f(np.array([rho]))[0])

    knots = sorted({math.log(1e-8), 0.0, math.log(rho_in), math.log(rho_out)})
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if b > a:
            val, _ = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=200)
            total += val
    return total


@dataclass(frozen=True)
class CorrectionProfile:
    """Samples of ``Phi_e`` and ``d Phi_e / d rho`` on a log grid."""

    rho_grid: np.ndarray
    values: np.ndarray
    d_rho: np.ndarray
    t: float = math.nan
    _spline: CubicHermiteSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.d_rho))):
            raise ValueError("corrector profile is not finite")
        u = np.log(self.rho_grid)
        object.__setattr__(self, "_spline",
                           CubicHermiteSpline(u, self.values, self.d_rho * self.rho_grid))

    @property
    def rho_max(self) -> float:
        return float(self.rho_grid[-1])

    def __call__(self, rho):
        """Interpolate; below the grid the profile continues as ``c rho^3``."""
        rho = np.asarray(rho, dtype=float)
        if np.any(rho > self.rho_max * (1 + 1e-12)):
            raise ValueError("rho beyond the corrector grid")
        r0 = self.rho_grid[0]
        inner = rho < r0
        safe = np.where(inner | (rho <= 0), r0, rho)
        out = self._spline(np.log(safe))
        return np.where(inner, self.values[0] * (np.maximum(rho, 0.0) / r0) ** 3, out)


def _log_grid(rho_min: float, rho_max: float, per_decade: int) -> np.ndarray:
    n = max(3, int(math.ceil(per_decade * math.log10(rho_max / rho_min))) + 1)
    return np.geomspace(rho_min, rho_max, n)


def _check_origin(H: Callable) -> None:
    eps = np.array([1e-10, 1e-8])
    h = np.asarray(H(eps), dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("source is singular at rho = 0")
    # a source that is O(rho) drops by 100 between the probes
    if abs(h[0]) > 0.1 * abs(h[1]) and h[0] != 0.0:
        raise ValueError("source must vanish at rho = 0")


def _kahan_cumsum(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    s = 0.0
    c = 0.0
    for i, v in enumerate(x):
        y = v - c
        tmp = s + y
        c = (tmp - s) - y
        s = tmp
        out[i] = s
    return out


def solve_Phi_e(Htilde: Callable, rho_max: float, t: float = math.nan,
                rho_min: float = RHO_MIN, per_decade: int = PER_DECADE) -> CorrectionProfile:
    """Variation-of-parameters solution of ``L Phi_e = H`` regular at the origin.

    Both cumulative integrals are accumulated in one pass over a log grid
    with 4-point Gauss-Legendre on each cell and compensated summation.  On
    ``[0, rho_min]`` the source is replaced by its linear leading term.
    """
    if not rho_max > rho_min:
        raise ValueError("rho_max must exceed rho_min")
    H = _as_array_fn(Htilde)
    _check_origin(H)
    rho = _log_grid(rho_min, rho_max, per_decade)
    u = np.log(rho)
    a, b = u[:-1], u[1:]
    half = 0.5 * (b - a)
    un = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES
    x = np.exp(un)
    Zx, Ztx, _, _ = eval_kernels_ZZt(x)
    hx = H(x.ravel()).reshape(x.shape)
    # dx = x du
    w = half[:, None] * _GL_WEIGHTS * x * x * hx
    c1 = np.sum(w * Zx, axis=1)
    c2 = np.sum(w * Ztx, axis=1)
    # leading term on [0, rho_min]: H ~ h1 x, Z ~ x, Zt ~ -1/(2x)
    h1 = float(H(np.array([rho_min]))[0]) / rho_min
    I1 = np.concatenate([[h1 * rho_min**4 / 4.0], h1 * rho_min**4 / 4.0 + _kahan_cumsum(c1)])
    I2 = np.concatenate([[-h1 * rho_min**2 / 4.0], -h1 * rho_min**2 / 4.0 + _kahan_cumsum(c2)])
    Z, Zt, dZ, dZt = eval_kernels_ZZt(rho)
    values = Zt * I1 - Z * I2
    d_rho = dZt * I1 - dZ * I2
    return CorrectionProfile(rho_grid=rho, values=values, d_rho=d_rho, t=float(t))


def residual_check(profile: CorrectionProfile, Htilde: Callable,
                   lo: float = 0.01, hi: Optional[float] = None) -> float:
    """Relative sup norm of ``L Phi_e - H`` on ``[lo, hi]`` (default ``hi = rho_max/2``)."""
    H = _as_array_fn(Htilde)
    hi = profile.rho_max / 2.0 if hi is None else hi
    rho = profile.rho_grid
    L = apply_linearized_L(rho, profile.values)
    sel = (rho >= lo) & (rho <= hi)
    sel[0] = sel[-1] = False
    h = H(rho[sel])
    scale = float(np.max(np.abs(h)))
    if scale == 0.0:
        return float(np.max(np.abs(L[sel])))
    return float(np.max(np.abs(L[sel] - h)) / scale)


def time_derivative(make_profile: Callable[[float], CorrectionProfile], t: float,
                    rel_step: float = 0.01) -> CorrectionProfile:
    """Centred difference ``d_t Phi_e`` with step ``rel_step * t``.

    ``make_profile(t)`` must return profiles on a common grid.
    """
    dt = rel_step * t
    p = make_profile(t + dt)
    m = make_profile(t - dt)
    if p.rho_grid.shape != m.rho_grid.shape or not np.allclose(p.rho_grid, m.rho_grid, rtol=1e-14):
        raise ValueError("profiles must share a grid")
    return CorrectionProfile(rho_grid=p.rho_grid, values=(p.values - m.values) / (2 * dt),
                             d_rho=(p.d_rho - m.d_rho) / (2 * dt), t=float(t))


def refine_mu_bar0(ts, mu_start, M_of: Callable, damping: float = 0.5, iterations: int = 8,
                   rel_probe: float = 1e-3, tol: float = 0.0):
    """Damped Newton-type iteration driving ``M[mu](t)`` towards zero.

    ``M_of(mu_samples)`` returns ``M`` at the times ``ts`` for the trajectory
    with the given samples.  The sensitivity is estimated once per iteration
    by a uniform relative perturbation of ``mu`` and used as a diagonal
    Jacobian.  Returns ``(mu, history)`` where ``history`` holds the sup of
    ``|M|`` before each update and after the last one.
    """
    ts = np.asarray(ts, dtype=float)
    mu = np.asarray(mu_start, dtype=float).copy()
    if mu.shape != ts.shape:
        raise ValueError("mu_start must match ts")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    history = []
    M = np.asarray(M_of(mu), dtype=float)
    for _ in range(iterations):
        history.append(float(np.max(np.abs(M))))
        if history[-1] <= tol:
            return mu, history
        probe = np.asarray(M_of(mu * (1 + rel_probe)), dtype=float)
        dM = (probe - M) / (rel_probe * mu)
        safe = np.where(np.abs(dM) > 0, dM, np.inf)
        step = damping * M / safe
        # keep mu positive
        step = np.clip(step, -0.5 * mu, 0.5 * mu)
        mu = mu - step
        M = np.asarray(M_of(mu), dtype=float)
    history.append(float(np.max(np.abs(M))))
    return mu, history
