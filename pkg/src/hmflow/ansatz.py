"""Approximate solution ``v_1`` and its error.

``v_* = eta(z) Q_mu`` with ``z = r/sqrt(t)`` and ``rho = r/mu``;
``v_1 = v_* + Phi_1 + Phi_2 + Psi_* + eta(4z) Phi_e``.  The error operator

    E[v] = -v_t + v_rr + v_r/r - sin(2v)/(2r^2)

is evaluated both by finite differences and from closed-form groupings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import mpmath
import numpy as np
from scipy.interpolate import PchipInterpolator

from . import corrector
from .heat4d import GammaContext, SpaceTimeSource, eval_psi_star, heat_convolve_duhamel
from .kernels import eval_cutoff, potential_V
from .mu_dynamics import MuTrajectory

__all__ = [
    "FirstErrorTerms",
    "AnsatzBundle",
    "apply_error_operator",
    "eval_first_error_terms",
    "eval_varphi_corrections",
    "assemble_v1",
    "make_vstar",
    "mu0_mp",
    "default_slab",
]


# ---------------------------------------------------------------------------
# error operator

def _stencil_E(v, r, t, hr, ht, sin):
    f = [v(r + k * hr, t) for k in (-2, -1, 0, 1, 2)]
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * hr)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * hr * hr)
    dt = (v(r, t + ht) - v(r, t - ht)) / (2 * ht)
    return -dt + d2 + d1 / r - sin(2 * f[2]) / (2 * r * r)


def apply_error_operator(v: Callable, r, t, hr=None, ht=None, precision: Optional[int] = None):
    """``E[v](r, t)`` by finite differences, with a stencil-halving error estimate.

    Fourth-order five-point differences in ``r`` and second-order centred
    differences in ``t``; both steps scale with the evaluation point.  With
    ``precision`` (decimal digits) the stencil runs in mpmath and ``v`` must
    accept mpf arguments; this removes the cancellation between ``v_rr`` and
    the trigonometric term where ``v`` is close to a steady state.

    Returns ``(E, err)`` as float arrays of the broadcast shape.
    """
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    if np.any(r <= 0) or np.any(t <= 0):
        raise ValueError("error operator needs r > 0 and t > 0")
    if precision is None:
        hr_ = 1e-3 * r if hr is None else np.broadcast_to(np.asarray(hr, dtype=float), r.shape)
        ht_ = 1e-4 * t if ht is None else np.broadcast_to(np.asarray(ht, dtype=float), t.shape)
        if np.any(4 * hr_ >= r) or np.any(2 * ht_ >= t):
            raise ValueError("stencil leaves the domain r > 0, t > 0")
        E1 = _stencil_E(v, r, t, hr_, ht_, np.sin)
        E2 = _stencil_E(v, r, t, 2 * hr_, 2 * ht_, np.sin)
        return E1, np.abs(E1 - E2)
    E = np.empty(r.shape)
    err = np.empty(r.shape)
    with mpmath.workdps(int(precision)):
        fr = mpmath.mpf(10) ** (-(int(precision) // 5))
        ft = mpmath.mpf(10) ** (-(int(precision) // 3))
        for idx in np.ndindex(r.shape):
            rr = mpmath.mpf(float(r[idx]))
            tt = mpmath.mpf(float(t[idx]))
            h = rr * fr if hr is None else mpmath.mpf(float(np.broadcast_to(hr, r.shape)[idx]))
            k = tt * ft if ht is None else mpmath.mpf(float(np.broadcast_to(ht, r.shape)[idx]))
            if 4 * h >= rr or 2 * k >= tt:
                raise ValueError("stencil leaves the domain r > 0, t > 0")
            a = _stencil_E(v, rr, tt, h, k, mpmath.sin)
            b = _stencil_E(v, rr, tt, 2 * h, 2 * k, mpmath.sin)
            E[idx] = float(a)
            err[idx] = float(abs(a - b))
    return E, err


# ---------------------------------------------------------------------------
# v_* and its grouped error

def _eta_mp(x):
    if x <= 1:
        return mpmath.mpf(1)
    if x >= 2:
        return mpmath.mpf(0)
    u = x - 1
    return 1 - u**3 * (10 - 15 * u + 6 * u * u)


def mu0_mp(ctx: GammaContext) -> Callable:
    """mpmath version of the leading scale ``mu_0(t)``."""
    g = mpmath.mpf(ctx.gamma)
    C = mpmath.mpf(ctx.C_gamma)

    def mu(t):
        L = mpmath.log(t)
        if ctx.gamma < 2:
            c1 = 2 * C / ((1 - g / 2) * (g - 1))
            return c1 * t ** (1 - g / 2) / L
        if ctx.gamma == 2:
            return 2 * C + 1 / L
        return 1 / L
    return mu


def make_vstar(mu_traj: MuTrajectory, mu_mp: Optional[Callable] = None) -> Callable:
    """``v_*(r, t) = eta(r/sqrt t) Q_mu(t)(r)``.

    Float arguments use ``mu_traj``; mpf arguments use ``mu_mp``.
    """
    def v(r, t):
        if isinstance(r, mpmath.mpf) or isinstance(t, mpmath.mpf):
            if mu_mp is None:
                raise TypeError("mpmath evaluation needs mu_mp")
            mu = mu_mp(t)
            return _eta_mp(r / mpmath.sqrt(t)) * (mpmath.pi - 2 * mpmath.atan(r / mu))
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        mu = mu_traj.mu(t)
        return eval_cutoff(r / np.sqrt(t)) * 2.0 * np.arctan2(mu, r)
    return v


def _q_minus(rho):
    """``Q - 2/rho = 2 (arctan(1/rho) - 1/rho)`` without cancellation."""
    x = 1.0 / rho
    series = 2.0 * x**3 * (-1.0 / 3 + x * x * (1.0 / 5 + x * x * (-1.0 / 7 + x * x * (1.0 / 9 - x * x / 11))))
    return np.where(x < 0.05, series, 2.0 * (np.arctan(x) - x))


@dataclass(frozen=True)
class FirstErrorTerms:
    E1: np.ndarray
    E21: np.ndarray
    E22: np.ndarray
    trig_remainder: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.E1 + self.E21 + self.E22 + self.trig_remainder


def eval_first_error_terms(mu_traj: MuTrajectory, r, t) -> FirstErrorTerms:
    """Closed-form groups of ``E[v_*]``.

    ``E1`` carries ``mu'``, ``E21`` the ``2/rho`` far-field parts of the
    cutoff terms, ``E22`` their remainders and ``trig_remainder`` the
    nonlinear cutoff mismatch ``eta sin(2Q)/(2r^2) - sin(2 eta Q)/(2r^2)``.
    """
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    mu = np.asarray(mu_traj.mu(t), dtype=float)
    mu_dot = np.asarray(mu_traj.mu_dot(t), dtype=float)
    sq = np.sqrt(t)
    z = r / sq
    rho = r / mu
    eta = eval_cutoff(z)
    eta1 = eval_cutoff(z, 1)
    eta2 = eval_cutoff(z, 2)
    Q = 2.0 * np.arctan2(mu, r)
    dQ = -2.0 / (rho * rho + 1.0)
    E1 = mu_dot / mu * eta * rho * dQ
    drift = r / (2.0 * t * sq) + 1.0 / (r * sq)
    E21 = 2.0 / (t * rho) * eta2 - 4.0 / (mu * sq * rho * rho) * eta1 + 2.0 / rho * drift * eta1
    qm = _q_minus(rho)
    dqm = 2.0 / (rho * rho * (rho * rho + 1.0))
    E22 = eta2 / t * qm + 2.0 / (mu * sq) * eta1 * dqm + drift * eta1 * qm
    trig = (eta * np.sin(2.0 * Q) - np.sin(2.0 * eta * Q)) / (2.0 * r * r)
    return FirstErrorTerms(E1=E1, E21=E21, E22=E22, trig_remainder=trig)


# ---------------------------------------------------------------------------
# Duhamel corrections

def _sources(mu_traj: MuTrajectory):
    def h1(s, tau):
        mu = float(mu_traj.mu(tau))
        md = float(mu_traj.mu_dot(tau))
        rho = s / mu
        return -2.0 * md / (mu * mu) * eval_cutoff(s / math.sqrt(tau)) / (rho * rho + 1.0)

    def h2(s, tau):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        live = (s > math.sqrt(tau)) & (s < 2.0 * math.sqrt(tau))
        if np.any(live):
            g = eval_first_error_terms(mu_traj, s[live], tau)
            out[live] = (g.E21 + g.E22) / s[live]
        return out

    def bp(tau):
        return (float(mu_traj.mu(tau)), math.sqrt(tau), 2.0 * math.sqrt(tau))

    src1 = SpaceTimeSource(h1, support=lambda tau: 2.0 * math.sqrt(tau), breakpoints=bp)
    src2 = SpaceTimeSource(h2, support=lambda tau: 2.0 * math.sqrt(tau), breakpoints=bp)
    return src1, src2


def eval_varphi_corrections(mu_traj: MuTrajectory, r, t: float, t0: float = 100.0):
    """``(phi_1, phi_2)`` at radii ``r`` and time ``t``; ``Phi_i = r phi_i``.

    Both solve the R^4 heat equation from zero data at ``t0/2`` with sources
    ``E1/r`` and ``(E21 + E22)/r``.
    """
    if not t > 0.5 * t0:
        raise ValueError("corrections are defined for t > t0/2")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    src1, src2 = _sources(mu_traj)
    phi1 = heat_convolve_duhamel(src1, r, t, 0.5 * t0)
    phi2 = heat_convolve_duhamel(src2, r, t, 0.5 * t0)
    return phi1, phi2


# ---------------------------------------------------------------------------
# bundle

def _sin_gap(vs, P):
    """``P - cos(2 vs + P) sin P``, i.e. ``P - (sin(2vs + 2P) - sin(2vs))/2``."""
    small = np.abs(P) < 1e-3
    p_minus_sin = np.where(small, P**3 / 6.0 - P**5 / 120.0, P - np.sin(P))
    return p_minus_sin + 2.0 * np.sin(vs + 0.5 * P) ** 2 * np.sin(P)


@dataclass
class AnsatzBundle:
    """Components of ``v_1`` with memoised evaluation.

    ``mu_bar0`` defaults to ``mu_traj.mu``; the corrector is built from an
    interpolant of ``phi + psi_*`` sampled on ``n_profile`` log-spaced radii.
    """

    ctx: GammaContext
    mu_traj: MuTrajectory
    t0: float = 100.0
    mu_bar0: Optional[Callable] = None
    n_profile: int = 96
    corrector_per_decade: int = corrector.PER_DECADE
    _phi_cache: dict = field(default_factory=dict, repr=False)
    _profile_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mu_bar0 is None:
            self.mu_bar0 = self.mu_traj.mu

    # -- Duhamel pieces, cached per (r, t)
    def phi(self, r, t: float):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        t = float(t)
        missing = np.array(sorted({float(x) for x in r if (float(x), t) not in self._phi_cache}))
        if missing.size:
            p1, p2 = eval_varphi_corrections(self.mu_traj, missing, t, self.t0)
            for x, a, b in zip(missing, p1, p2):
                self._phi_cache[(float(x), t)] = (a, b)
        vals = np.array([self._phi_cache[(float(x), t)] for x in r])
        return vals[:, 0], vals[:, 1]

    def psi(self, r, t: float):
        return eval_psi_star(self.ctx.gamma, np.asarray(r, dtype=float), float(t))

    def Phi_out(self, r, t: float):
        """``Phi_1 + Phi_2 + Psi_*``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        p1, p2 = self.phi(r, t)
        return r * (p1 + p2 + self.psi(r, t))

    # -- elliptic corrector
    def profile(self, t: float):
        """``(mu_bar, M, H, CorrectionProfile)`` at time ``t``."""
        t = float(t)
        if t in self._profile_cache:
            return self._profile_cache[t]
        mu = float(self.mu_bar0(t))
        sq = math.sqrt(t)
        r_nodes = np.geomspace(1e-3 * min(mu, 1.0), 2.0 * sq * 1.001, self.n_profile)
        p1, p2 = self.phi(r_nodes, t)
        total = p1 + p2 + self.psi(r_nodes, t)
        interp = PchipInterpolator(np.log(r_nodes), total, extrapolate=True)
        lo = float(np.log(r_nodes[0]))

        def f(rho):
            lr = np.log(np.maximum(mu * np.asarray(rho, dtype=float), 1e-300))
            return interp(np.maximum(lr, lo))

        M = corrector.eval_M(self.ctx, mu, t, f)
        H = corrector.build_Htilde(self.ctx, mu, t, f, M)
        prof = corrector.solve_Phi_e(H, H.support, t, per_decade=self.corrector_per_decade)
        out = (mu, M, H, prof)
        self._profile_cache[t] = out
        return out

    def W(self, r, t: float):
        """``eta(4z) Phi_e(r/mu_bar, t)``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        mu, _, _, prof = self.profile(t)
        cut = eval_cutoff(4.0 * r / math.sqrt(t))
        out = np.zeros_like(r)
        live = cut > 0
        if np.any(live):
            out[live] = cut[live] * prof(r[live] / mu)
        return out

    def vstar(self, r, t: float):
        return make_vstar(self.mu_traj)(np.asarray(r, dtype=float), float(t))

    def v1(self, r, t: float):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return self.vstar(r, t) + self.Phi_out(r, t) + self.W(r, t)

    # -- errors
    def error_vstar(self, r, t: float):
        return eval_first_error_terms(self.mu_traj, r, t).total

    def error_v1(self, r, t: float, rel_step: float = 0.01):
        """``E[v_1]`` from the construction identities.

        The Duhamel equations remove ``E1 + E2`` from ``E[v_*]``; what is left
        is the trigonometric remainder, the linear action on
        ``eta(4z) Phi_e`` (using ``L Phi_e = H``) and the nonlinear gap
        ``(P - (sin(2v_* + 2P) - sin(2v_*))/2)/r^2`` of ``P = v_1 - v_*``.
        ``d_t Phi_e`` at fixed ``rho`` is a centred difference with step
        ``rel_step * t``.
        """
        r = np.atleast_1d(np.asarray(r, dtype=float))
        t = float(t)
        terms = eval_first_error_terms(self.mu_traj, r, t)
        mu, _, H, prof = self.profile(t)
        sq = math.sqrt(t)
        z = r / sq
        rho = r / mu
        c0 = eval_cutoff(4.0 * z)
        c1 = eval_cutoff(4.0 * z, 1)
        c2 = eval_cutoff(4.0 * z, 2)
        lin = np.zeros_like(r)
        live = (c0 > 0) | (c1 != 0)
        if np.any(live):
            rl, zl, pl = r[live], z[live], rho[live]
            P = prof(pl)
            dP = np.interp(np.log(pl), np.log(prof.rho_grid), prof.d_rho)
            dt = rel_step * t
            ep = self.profile(t + dt)[3]
            em = self.profile(t - dt)[3]
            dtP = (ep(pl) - em(pl)) / (2.0 * dt)
            mu_dot = float(np.asarray(self._mu_bar_dot(t)))
            inner = (H(pl) - potential_V(pl) * P) / (mu * mu) - dtP + mu_dot / mu * pl * dP
            lin[live] = (c0[live] * inner
                         + c1[live] * (2.0 * zl / t * P + 8.0 / (sq * mu) * dP + 4.0 / (sq * rl) * P)
                         + 16.0 / t * c2[live] * P)
        vs = self.vstar(r, t)
        Ptot = self.Phi_out(r, t) + self.W(r, t)
        gap = _sin_gap(vs, Ptot) / (r * r)
        return terms.trig_remainder + lin + gap

    def _mu_bar_dot(self, t: float):
        if self.mu_bar0 is self.mu_traj.mu:
            return self.mu_traj.mu_dot(t)
        h = 1e-4 * t
        return (self.mu_bar0(t + h) - self.mu_bar0(t - h)) / (2 * h)

    def duhamel_residual(self, r, t: float, rel_step: float = 0.02):
        """``d_t Phi_1 - d_rr Phi_1 - d_r Phi_1/r + Phi_1/r^2 - E1`` by finite differences."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        t = float(t)

        def Phi1(rr, tt):
            rr = np.asarray(rr, dtype=float)
            flat = rr.ravel()
            return (flat * self.phi(flat, float(np.asarray(tt).ravel()[0]))[0]).reshape(rr.shape)

        h = rel_step * r
        f = [Phi1(r + k * h, t) for k in (-2, -1, 0, 1, 2)]
        d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
        d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
        k = rel_step * t
        dtv = (Phi1(r, t + k) - Phi1(r, t - k)) / (2 * k)
        E1 = eval_first_error_terms(self.mu_traj, r, t).E1
        return dtv - d2 - d1 / r + f[2] / (r * r) - E1, E1


def assemble_v1(bundle: AnsatzBundle, r, t: float):
    """``v_1 = eta(z) Q_mu + Phi_1 + Phi_2 + Psi_* + eta(4z) Phi_e``."""
    return bundle.v1(r, t)


def default_slab(t_values=(1e3, 1e4, 1e5), n: int = 200):
    """Log grid ``r in [1e-3 sqrt t, 8 sqrt t]`` for each ``t``; returns ``(R, T)``."""
    rows_r = []
    rows_t = []
    for t in t_values:
        sq = math.sqrt(t)
        rows_r.append(np.geomspace(1e-3 * sq, 8.0 * sq, n))
        rows_t.append(np.full(n, float(t)))
    return np.array(rows_r), np.array(rows_t)
