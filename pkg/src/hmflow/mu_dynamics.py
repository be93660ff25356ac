"""Scaling-parameter dynamics: mu_0, the memory integral and the mu_1 solver.

The scale mu(t) of the bubble obeys, to leading order, the non-local balance

    int_{t/2}^{t - mu^2(t)} mu'(s) / (t - s) ds + mu(t) / t  =  2 C_gamma v_gamma(t).

:func:`solve_mu` refines a base trajectory by a correction mu_1 solving the
model problem in which the near-diagonal part of the memory integral is
replaced by ``mu_1'(t) [(1 - nu) ln t - 2 ln mu_0(t)]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .heat4d import GammaContext, v_gamma

__all__ = [
    "MuTrajectory",
    "SplitParameters",
    "SolveResult",
    "DivergenceError",
    "mu0_leading",
    "mu0_trajectory",
    "eval_nonlocal_integral",
    "eval_nonlocal_residual",
    "check_log_integral",
    "solve_mu",
    "a1_norm",
    "holder_quotient",
    "make_a2_stub",
    "make_a3_stub",
    "log_grid",
]

log = logging.getLogger(__name__)

PER_DECADE = 64


class DivergenceError(RuntimeError):
    """Picard iteration for mu_1 stopped contracting."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def log_grid(t_lo: float, t_hi: float, per_decade: int = PER_DECADE) -> np.ndarray:
    n = max(2, int(math.ceil(per_decade * math.log10(t_hi / t_lo))) + 1)
    return np.geomspace(t_lo, t_hi, n)


class MuTrajectory:
    """Samples of mu and mu' on a log-spaced time grid.

    Between samples mu is interpolated by a monotone cubic in ``ln t`` and mu'
    by a monotone cubic of ``mu' t^{-p}``.  When exact callables are supplied
    they are used for evaluation and the samples serve only as a record.
    """

    def __init__(self, times, mu, mu_dot, p: float = 0.0,
                 exact: Optional[tuple[Callable, Callable]] = None):
        times = np.asarray(times, dtype=float)
        mu = np.asarray(mu, dtype=float)
        mu_dot = np.asarray(mu_dot, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if np.any(mu <= 0):
            raise ValueError("mu must stay positive")
        self.times = times
        self.mu_samples = mu
        self.mu_dot_samples = mu_dot
        self.p = float(p)
        self._exact = exact
        lt = np.log(times)
        self._mu_interp = PchipInterpolator(lt, mu, extrapolate=True)
        self._md_interp = PchipInterpolator(lt, mu_dot * times ** (-self.p), extrapolate=True)

    @classmethod
    def from_callable(cls, mu: Callable, mu_dot: Callable, t_lo: float, t_hi: float,
                      per_decade: int = PER_DECADE, p: float = 0.0) -> "MuTrajectory":
        ts = log_grid(t_lo, t_hi, per_decade)
        return cls(ts, mu(ts), mu_dot(ts), p=p, exact=(mu, mu_dot))

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def mu(self, t):
        if self._exact is not None:
            return self._exact[0](t)
        return self._mu_interp(np.log(t))

    def mu_dot(self, t):
        if self._exact is not None:
            return self._exact[1](t)
        t = np.asarray(t, dtype=float)
        return self._md_interp(np.log(t)) * t**self.p

    def plus(self, other: "MuTrajectory") -> "MuTrajectory":
        """Pointwise sum, keeping exact evaluation where both sides have it."""
        exact = None
        if self._exact is not None and other._exact is not None:
            exact = (lambda t: self.mu(t) + other.mu(t), lambda t: self.mu_dot(t) + other.mu_dot(t))
        ts = self.times
        return _SumTrajectory(self, other, ts, exact)


class _SumTrajectory(MuTrajectory):
    def __init__(self, a: MuTrajectory, b: MuTrajectory, ts, exact):
        self._a, self._b = a, b
        super().__init__(ts, a.mu(ts) + b.mu(ts), a.mu_dot(ts) + b.mu_dot(ts), p=a.p, exact=exact)

    def mu(self, t):
        return self._a.mu(t) + self._b.mu(t)

    def mu_dot(self, t):
        return self._a.mu_dot(t) + self._b.mu_dot(t)


@dataclass(frozen=True)
class SplitParameters:
    """Exponents of the model problem for mu_1."""

    nu: float
    p: float
    alpha: float = 0.5

    def validate(self, ctx: GammaContext) -> None:
        g = ctx.gamma
        if not 0 < self.nu < 1 or not 2 * self.nu < min(g - 1.0, 1.0):
            raise ValueError(f"need 0 < 2 nu < min(gamma - 1, 1), got nu={self.nu}")
        if self.p == -1:
            raise ValueError("p = -1 is excluded")
        bound = -0.5 * g if g < 2 else -1.0
        if not self.p < bound:
            raise ValueError(f"need p < {bound} for gamma={g}, got p={self.p}")
        if not 0 < self.alpha < 1:
            raise ValueError("Hoelder exponent must lie in (0, 1)")

    @classmethod
    def default(cls, ctx: GammaContext) -> "SplitParameters":
        g = ctx.gamma
        nu = 0.4 * min(g - 1.0, 1.0)
        p = -0.5 * g - 0.1 if g < 2 else -1.5
        return cls(nu=nu, p=p)


def mu0_leading(ctx: GammaContext, t, C: Optional[float] = None):
    """Leading scale ``mu_0(t)`` and its derivative in each regime."""
    t = np.asarray(t, dtype=float)
    g = ctx.gamma
    C = ctx.C_gamma if C is None else C
    L = np.log(t)
    if g < 2:
        c1 = 2.0 * C / ((1.0 - 0.5 * g) * (g - 1.0))
        mu = c1 * t ** (1.0 - 0.5 * g) / L
        mu_dot = c1 * t ** (-0.5 * g) / L * ((1.0 - 0.5 * g) - 1.0 / L)
    elif g == 2:
        mu = 2.0 * C + 1.0 / L
        mu_dot = -1.0 / (t * L * L)
    else:
        mu = 1.0 / L
        mu_dot = -1.0 / (t * L * L)
    return mu, mu_dot


def mu0_trajectory(ctx: GammaContext, t_lo: float, t_hi: float,
                   per_decade: int = PER_DECADE, C: Optional[float] = None) -> MuTrajectory:
    p = -0.5 * ctx.gamma if ctx.gamma < 2 else -1.0
    return MuTrajectory.from_callable(lambda t: mu0_leading(ctx, t, C)[0],
                                      lambda t: mu0_leading(ctx, t, C)[1],
                                      t_lo, t_hi, per_decade, p=p)


def eval_nonlocal_integral(traj: MuTrajectory, t: float, cut: Optional[float] = None,
                           rtol: float = 1e-9, full_output: bool = False):
    """Memory integral ``int_{t/2}^{t - cut} mu'(s) / (t - s) ds``.

    ``cut`` defaults to ``mu(t)^2``.  With ``u = ln(t - s)`` the integral
    becomes ``int mu'(t - e^u) du`` over ``[ln cut, ln(t/2)]``.
    """
    if cut is None:
        cut = float(traj.mu(t)) ** 2
    if cut >= 0.5 * t:
        raise ValueError(f"upper limit t - mu^2 crosses t/2 at t={t}")
    if 0.5 * t < traj.t_min:
        raise ValueError("memory window leaves the trajectory grid")
    u_lo, u_hi = math.log(cut), math.log(0.5 * t)
    pts = None
    if traj._exact is None:
        knots = traj.times[(traj.times > 0.5 * t) & (traj.times < t - cut)]
        pts = np.log(t - knots)
        pts = pts[(pts > u_lo) & (pts < u_hi)]
        if pts.size > 90:
            pts = pts[:: int(math.ceil(pts.size / 90))]

    def f(u):
        return float(traj.mu_dot(t - math.exp(u)))

    val, err = integrate.quad(f, u_lo, u_hi, epsabs=0.0, epsrel=rtol, limit=400,
                              points=None if pts is None or pts.size == 0 else pts)
    return (val, err) if full_output else val


def eval_nonlocal_residual(ctx: GammaContext, traj: MuTrajectory, t: float,
                           cut: Optional[float] = None, forcing_scale: float = 1.0) -> float:
    """``I_nl + mu/t - 2 C_gamma v_gamma(t)``."""
    inl = eval_nonlocal_integral(traj, t, cut=cut)
    return inl + float(traj.mu(t)) / t - forcing_scale * 2.0 * ctx.C_gamma * float(v_gamma(ctx.gamma, t))


def _c1_for(p0: float) -> float:
    g = 2.0 * p0
    if 1.0 < g < 2.0:
        return 2.0 * GammaContext(g).C_gamma / ((1.0 - 0.5 * g) * (g - 1.0))
    return 1.0


def check_log_integral(p0: float, t: float, t1: Optional[float] = None,
                       power: int = 1, c1: Optional[float] = None) -> float:
    """``int_{t1/t}^{1 - mu_0^2/t} (1-z)^{-1} z^{-p0} (ln tz)^{-power} dz``.

    ``mu_0 = c1 t^{1-p0} / ln t``; ``c1`` defaults to the coefficient of the
    leading scale for ``gamma = 2 p0`` (1 outside ``1 < gamma < 2``).
    """
    t1 = 0.5 * t if t1 is None else t1
    if t1 > 0.5 * t:
        raise ValueError("need t1 <= t/2")
    c1 = _c1_for(p0) if c1 is None else c1
    mu0 = c1 * t ** (1.0 - p0) / math.log(t)
    # w = -ln(1 - z) resolves the endpoint singularity
    w_lo = -math.log1p(-t1 / t)
    w_hi = math.log(t) - 2.0 * math.log(mu0)
    if w_hi <= w_lo:
        raise ValueError("empty integration range")
    lt = math.log(t)

    def f(w):
        z = -math.expm1(-w)
        return z ** (-p0) * (lt + math.log(z)) ** (-power)

    val, _ = integrate.quad(f, w_lo, w_hi, epsabs=0.0, epsrel=1e-12, limit=400)
    return val


# ---------------------------------------------------------------------------
# mu_1 model problem


def _chi(t, t0):
    """Smooth switch: 0 below 3 t0 / 4, 1 above t0."""
    x = np.clip((np.asarray(t, dtype=float) - 0.75 * t0) / (0.25 * t0), 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


@dataclass
class SolveResult:
    mu: MuTrajectory
    mu1: MuTrajectory
    times: np.ndarray
    mu1_dot: np.ndarray
    residual: np.ndarray
    iterations: int
    updates: list = field(default_factory=list)
    converged: bool = True


def make_a2_stub(base: MuTrajectory, ctx: GammaContext, coeff: float = 1.0,
                 lnR0: Callable = lambda t: np.log(np.log(t))):
    """Magnitude of the leading ``a_2`` bound, used as a forcing stub."""
    def a2(ts, mu1, mu1_dot):
        m0 = base.mu(ts)
        md0 = np.abs(base.mu_dot(ts))
        return coeff * (np.abs(mu1) * ts**-2.0 * m0**2 * lnR0(ts)
                        + md0 * (np.abs(mu1) / m0 + np.abs(mu1_dot) / np.maximum(md0, 1e-300)))
    return a2


def make_a3_stub(R0: Callable, eps0: float = 0.1):
    """``R0^{-eps0}`` times the magnitude of the remaining terms."""
    def a3(ts, mu1, mu1_dot, a1_val, a2_val, hist_abs):
        return R0(ts) ** (-eps0) * (np.abs(a1_val) + np.abs(a2_val) + hist_abs + np.abs(mu1) / ts)
    return a3


class _Mu1Operator:
    """Discretisation of the mu_1 fixed-point map on a log grid."""

    def __init__(self, ts, base, ctx, split, t0, n_gl=24):
        self.ts = ts
        self.base = base
        self.ctx = ctx
        self.split = split
        self.t0 = t0
        self.lt = np.log(ts)
        self.chi = _chi(ts, t0)
        m0 = base.mu(ts)
        self.L = (1.0 - split.nu) * self.lt - 2.0 * np.log(m0)
        # history quadrature in u = ln(t - s), s in [t/2, t - t^{1-nu}]
        x, w = np.polynomial.legendre.leggauss(n_gl)
        u_lo = (1.0 - split.nu) * self.lt
        u_hi = np.log(0.5 * ts)
        span = np.maximum(u_hi - u_lo, 0.0)
        u = u_lo[:, None] + 0.5 * span[:, None] * (x + 1.0)
        self.hist_s = ts[:, None] - np.exp(u)
        self.hist_w = 0.5 * span[:, None] * w

    def interp_dot(self, md):
        p = self.split.p
        f = PchipInterpolator(self.lt, md * self.ts ** (-p), extrapolate=False)

        def ev(s):
            s = np.asarray(s, dtype=float)
            out = f(np.log(np.clip(s, self.ts[0], self.ts[-1]))) * s**p
            out = np.where(s < self.ts[0], 0.0, out)
            # power-law continuation beyond the horizon
            return np.where(s > self.ts[-1], md[-1] * (s / self.ts[-1]) ** p, out)
        return ev

    def integrate(self, md):
        """mu_1 from mu_1' following the sign of p + 1."""
        ts = self.ts
        g = md * ts  # d mu_1 / d ln t
        cum = integrate.cumulative_simpson(g, x=self.lt, initial=0.0)
        if self.split.p > -1:
            return cum - np.interp(math.log(self.t0), self.lt, cum)
        tail = self._tail(md)
        return -(cum[-1] - cum) - tail

    def _tail(self, md):
        ts = self.ts
        k = max(2, min(16, ts.size // 4))
        a, b = md[-k], md[-1]
        if a == 0 or b == 0 or np.sign(a) != np.sign(b):
            q = self.split.p
        else:
            q = math.log(abs(b / a)) / math.log(ts[-1] / ts[-k])
        q = min(q, -1.0 - 1e-3)
        return b * ts[-1] / (-q - 1.0)

    def history(self, md):
        ev = self.interp_dot(md)
        return np.sum(self.hist_w * ev(self.hist_s), axis=1), np.sum(self.hist_w * np.abs(ev(self.hist_s)), axis=1)


def solve_mu(ctx: GammaContext, split: Optional[SplitParameters] = None,
             horizon: tuple[float, float] = (1e2, 1e8),
             base: Optional[MuTrajectory] = None,
             a1: Optional[Callable] = None,
             a2: Optional[Callable] = None,
             a3: Optional[Callable] = None,
             forcing_scale: float = 1.0,
             per_decade: int = PER_DECADE,
             relax: float = 0.5,
             tol: float = 1e-10,
             max_iter: int = 200,
             mu1_dot_init: Optional[np.ndarray] = None) -> SolveResult:
    """Solve the mu_1 model problem by damped Picard iteration.

    Parameters
    ----------
    horizon : (t0, T)
        The grid covers ``[t0/4, T]``; the switch-on time is ``t0``.
    a1 : callable, optional
        Forcing ``ts -> array``.  Defaults to minus the non-local residual of
        ``base`` (upper limit ``t - mu_0^2``), i.e. the full problem.
    a2, a3 : callable, optional
        Extra terms, see :func:`make_a2_stub` and :func:`make_a3_stub`.
    """
    split = SplitParameters.default(ctx) if split is None else split
    split.validate(ctx)
    t0, T = horizon
    if base is None:
        C = ctx.C_gamma * forcing_scale
        base = mu0_trajectory(ctx, t0 / 4.0, T, per_decade, C=C)
    ts = log_grid(t0 / 4.0, T, per_decade)
    op = _Mu1Operator(ts, base, ctx, split, t0)
    m0 = base.mu(ts)
    if a1 is None:
        a1_vals = np.zeros_like(ts)
        on = ts >= 0.75 * t0
        for i in np.flatnonzero(on):
            a1_vals[i] = -eval_nonlocal_residual(ctx, base, ts[i], cut=m0[i] ** 2,
                                                 forcing_scale=forcing_scale)
    else:
        a1_vals = np.asarray(a1(ts), dtype=float)

    md = np.zeros_like(ts) if mu1_dot_init is None else np.array(mu1_dot_init, dtype=float)
    updates: list[float] = []
    growth = 0
    it = 0
    for it in range(1, max_iter + 1):
        mu1 = op.integrate(md)
        hist, hist_abs = op.history(md)
        rhs = -mu1 / ts - hist + a1_vals
        a2_vals = np.zeros_like(ts) if a2 is None else a2(ts, mu1, md)
        rhs = rhs + a2_vals
        if a3 is not None:
            rhs = rhs + a3(ts, mu1, md, a1_vals, a2_vals, hist_abs)
        new = op.chi * rhs / op.L
        scale = max(np.max(np.abs(new * ts ** (-split.p))), 1e-300)
        upd = np.max(np.abs((new - md) * ts ** (-split.p))) / scale
        md = (1.0 - relax) * md + relax * new
        updates.append(upd)
        if len(updates) > 1 and upd > updates[-2]:
            growth += 1
            if growth >= 5:
                raise DivergenceError(f"mu_1 iteration diverging at step {it}", updates)
        else:
            growth = 0
        if upd < tol or np.max(np.abs(new)) == 0.0:
            break
    converged = updates[-1] < tol or np.max(np.abs(md)) == 0.0
    if not converged:
        log.warning("mu_1 iteration stopped after %d steps, last update %.2e", it, updates[-1])
    mu1 = op.integrate(md)
    mu1_traj = _Mu1Trajectory(ts, mu1, md, split.p, op)
    mu_traj = base.plus(mu1_traj)
    hist, _ = op.history(md)
    residual = op.L * md + hist + mu1 / ts - a1_vals
    return SolveResult(mu=mu_traj, mu1=mu1_traj, times=ts, mu1_dot=md, residual=residual,
                       iterations=it, updates=updates, converged=converged)


class _Mu1Trajectory(MuTrajectory):
    """Correction mu_1, which may change sign, so no positivity check."""

    def __init__(self, ts, mu1, md, p, op):
        self.times = ts
        self.mu_samples = mu1
        self.mu_dot_samples = md
        self.p = p
        self._exact = None
        self._mu_interp = PchipInterpolator(np.log(ts), mu1, extrapolate=True)
        self._dot = op.interp_dot(md)

    def mu(self, t):
        return self._mu_interp(np.log(t))

    def mu_dot(self, t):
        return self._dot(t)


def a1_norm(ts, a1_vals, p: float, dmu_a1=None):
    """The two parts of ``||a_1||_p``: value term and ``t |d_mu a_1|`` term."""
    ts = np.asarray(ts, dtype=float)
    value = np.max(np.abs(a1_vals) / (ts**p * np.log(ts)))
    deriv = 0.0 if dmu_a1 is None else float(np.max(ts * np.abs(dmu_a1)))
    return value, deriv


def holder_quotient(traj: MuTrajectory, t: float, alpha: float, p: float, n: int = 33) -> float:
    """Sampled ``sup |mu'(t1) - mu'(t2)| / |t1 - t2|^alpha`` on ``[t/2, t]``, scaled by ``t^{alpha - p}``."""
    s = np.linspace(0.5 * t, t, n)
    md = traj.mu_dot(s)
    d = np.abs(md[:, None] - md[None, :])
    dt = np.abs(s[:, None] - s[None, :])
    mask = dt > 0
    return float(np.max(d[mask] / dt[mask] ** alpha) * t ** (alpha - p))
