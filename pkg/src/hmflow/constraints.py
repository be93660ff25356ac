"""Feasibility of the exponent inequality systems and the weight functions.

Each inequality is stored as a named slack ``s(params) > 0``; products of
powers of ``t`` are compared through their exponents with

    R = t^omega,  tau ~ t^{e_tau},  mu_0 ~ t^{m},

where ``e_tau = min(gamma - 1, 1)`` and ``m = 1 - gamma/2`` for
``gamma < 2`` and 0 otherwise.  Logarithmic factors are absorbed by the
strictness of the inequalities.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np
from scipy import optimize

from . import mu_dynamics, rates
from .heat4d import GammaContext

__all__ = [
    "ParameterTuple",
    "SearchResult",
    "WeightSet",
    "slacks",
    "verify_tuple",
    "feasible_parameters",
    "eval_weights",
    "SLACK_MIN",
]

SLACK_MIN = 1e-3
GRID_POINTS = 20
FREE = ("omega", "a", "alpha", "nu", "kappa", "ell")


@dataclass(frozen=True)
class ParameterTuple:
    omega: float
    a: float
    alpha: float
    nu: float
    kappa: float
    ell: float
    p: float = float("nan")
    delta: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def _exponents(gamma: float):
    e_tau = min(gamma - 1.0, 1.0)
    m = 1.0 - 0.5 * gamma if gamma < 2 else 0.0
    return e_tau, m


def derived_p(gamma: float, omega, a, kappa):
    """Power of ``t`` in ``theta = tau^-kappa mu_0^-1 R^{-1-a}``."""
    e_tau, m = _exponents(gamma)
    return -kappa * e_tau - m - omega * (1.0 + a)


def default_delta(gamma: float, omega):
    """``R_0 = tau^delta`` chosen halfway below ``R``: ``delta e_tau = omega / 2``."""
    e_tau, _ = _exponents(gamma)
    return 0.5 * omega / e_tau


def slacks(gamma: float, P, reading: str = "per-regime") -> Dict[str, np.ndarray]:
    """All inequalities as ``name -> slack``; satisfied iff every slack is positive.

    ``P`` is a mapping (or :class:`ParameterTuple`) whose entries may be
    numpy arrays, so the grid search evaluates whole blocks at once.
    ``reading="uniform"`` additionally imposes both regime blocks of the
    inner-problem system for every gamma.
    """
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    if reading not in ("per-regime", "uniform"):
        raise ValueError(f"unknown reading {reading!r}")
    if isinstance(P, ParameterTuple):
        P = P.as_dict()
    w, a, al, nu, k, l = (P[n] for n in FREE)
    e_tau, m = _exponents(gamma)
    g = gamma
    sub = gamma < 2
    S = {}
    # first system
    if sub:
        S["r1: -w(1+a)+g-1-nu*al<0"] = w * (1 + a) - (g - 1) + nu * al
        S["r1: 0<w"] = w
        S["r1: w<(g-1)/2"] = (g - 1) / 2 - w
        S["r1: 0<nu"] = nu
        S["r1: nu<(g-1)/2"] = (g - 1) / 2 - nu
    else:
        S["r1: -w(1+a)+1-nu*al<0"] = w * (1 + a) - 1 + nu * al
        S["r1: 0<w"] = w
        S["r1: w<1/2"] = 0.5 - w
        S["r1: 0<nu"] = nu
        S["r1: nu<1/2"] = 0.5 - nu
    S["r1: 0<al"] = al
    S["r1: al<1"] = 1 - al
    S["r1: 0<a"] = a
    S["r1: a<l-2"] = l - 2 - a
    # the two requirements the first system is derived from
    S["req: R^-1-a mu0^(2al-2) t^(1-al)<<1"] = w * (1 + a) - (2 * al - 2) * m - (1 - al)
    S["req: R^-1-a mu0^-2 t^(1-nu*al)<<1"] = w * (1 + a) + 2 * m - (1 - nu * al)
    # outer problem
    if sub:
        S["out: 2-g/2-k(g-1)+w(1-a)>0"] = 2 - g / 2 - k * (g - 1) + w * (1 - a)
    else:
        S["out: 1-k+w(1-a)>0"] = 1 - k + w * (1 - a)
    # inner problem
    if sub:
        S["r2: 2-2g+k(g-1)+w(l-1)<0"] = -(2 - 2 * g + k * (g - 1) + w * (l - 1))
    else:
        S["r2: k-2+w(l-1)<0"] = -(k - 2 + w * (l - 1))
    if not sub or reading == "uniform":
        S["r2: w(l-3-2a)-k<0"] = -(w * (l - 3 - 2 * a) - k)
        S["r2: w(l-7-2a)+2-2al*nu-k<0"] = -(w * (l - 7 - 2 * a) + 2 - 2 * al * nu - k)
    if sub or reading == "uniform":
        S["r2: w(l-3-2a)-k(g-1)<0"] = -(w * (l - 3 - 2 * a) - k * (g - 1))
        S["r2: w(l-7-2a)+2-2al*nu-k(g-1)-2(2-g)<0"] = -(
            w * (l - 7 - 2 * a) + 2 - 2 * al * nu - k * (g - 1) - 2 * (2 - g))
        S["r2: 4(1-g)+w(l+3)+k(g-1)<0"] = -(4 * (1 - g) + w * (l + 3) + k * (g - 1))
    # domain
    S["dom: 1<l"] = l - 1
    S["dom: l<3"] = 3 - l
    S["dom: 0<k"] = k
    # scales R_0 = tau^delta with 1 << R_0 << R
    delta = P.get("delta", None)
    if delta is None or (np.ndim(delta) == 0 and not np.isfinite(delta)):
        delta = default_delta(gamma, w)
    S["dom: 0<delta"] = delta
    S["dom: R0<<R"] = w - delta * e_tau
    p = derived_p(gamma, w, a, k)
    S["dom: p!=-1"] = np.abs(p + 1.0)
    return S


def verify_tuple(gamma: float, tup: ParameterTuple, reading: str = "per-regime") -> Dict[str, bool]:
    """Second, scalar code path: each inequality written out as a boolean."""
    g = float(gamma)
    w, a, al, nu, k, l = tup.omega, tup.a, tup.alpha, tup.nu, tup.kappa, tup.ell
    eps = SLACK_MIN
    et = (g - 1.0) if g < 2 else 1.0
    m0 = (1.0 - g / 2.0) if g < 2 else 0.0
    d = tup.delta if math.isfinite(tup.delta) else w / (2.0 * et)
    ok = {}
    if g < 2:
        ok["restriction1"] = (-w * (1 + a) + g - 1 - nu * al < -eps and eps < w < (g - 1) / 2 - eps
                              and eps < nu < (g - 1) / 2 - eps)
        ok["out-restrict"] = 2 - g / 2 - k * (g - 1) + w * (1 - a) > eps
        lines = [2 - 2 * g + k * (g - 1) + w * (l - 1),
                 w * (l - 3 - 2 * a) - k * (g - 1),
                 w * (l - 7 - 2 * a) + 2 - 2 * al * nu - k * (g - 1) - 2 * (2 - g),
                 4 * (1 - g) + w * (l + 3) + k * (g - 1)]
        if reading == "uniform":
            lines += [w * (l - 3 - 2 * a) - k, w * (l - 7 - 2 * a) + 2 - 2 * al * nu - k]
    else:
        ok["restriction1"] = (-w * (1 + a) + 1 - nu * al < -eps and eps < w < 0.5 - eps
                              and eps < nu < 0.5 - eps)
        ok["out-restrict"] = 1 - k + w * (1 - a) > eps
        lines = [k - 2 + w * (l - 1),
                 w * (l - 3 - 2 * a) - k,
                 w * (l - 7 - 2 * a) + 2 - 2 * al * nu - k]
        if reading == "uniform":
            lines += [w * (l - 3 - 2 * a) - k * (g - 1),
                      w * (l - 7 - 2 * a) + 2 - 2 * al * nu - k * (g - 1) - 2 * (2 - g),
                      4 * (1 - g) + w * (l + 3) + k * (g - 1)]
    ok["restriction2"] = all(x < -eps for x in lines)
    ok["ranges"] = eps < al < 1 - eps and eps < a < l - 2 - eps and 1 + eps < l < 3 - eps and k > eps
    # the two lines behind the first system, in power form at t = 1e8
    t = 1e8
    R = t**w
    mu0 = t**m0
    ok["eqn-requirements"] = (R ** (-1 - a) * mu0 ** (2 * al - 2) * t ** (1 - al) < 1
                              and R ** (-1 - a) * mu0 ** -2 * t ** (1 - al + (1 - nu) * al) < 1)
    ok["scales"] = d > eps and w - d * et > eps
    p = -k * et - m0 - w * (1 + a)
    ok["p!=-1"] = abs(p + 1) > eps
    return ok


@dataclass(frozen=True)
class SearchResult:
    gamma: float
    feasible: bool
    witness: Optional[ParameterTuple]
    min_slack: float
    tightest: str
    slacks: dict
    reading: str = "per-regime"

    def csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["gamma", "feasible", "min_slack", "tightest"] + [f.name for f in fields(ParameterTuple)])
        vals = [f"{getattr(self.witness, f.name):.17g}" for f in fields(ParameterTuple)] if self.witness else \
            [""] * len(fields(ParameterTuple))
        wr.writerow([f"{self.gamma:.17g}", int(self.feasible), f"{self.min_slack:.17g}", self.tightest] + vals)
        return buf.getvalue()


def _bounds(gamma: float):
    half = (gamma - 1) / 2 if gamma < 2 else 0.5
    k_hi = (3.0 - gamma / 2) / (gamma - 1) if gamma < 2 else 2.0
    return {"omega": (0.0, half), "a": (0.0, 1.0), "alpha": (0.0, 1.0), "nu": (0.0, half),
            "kappa": (0.0, k_hi), "ell": (2.0, 3.0)}


def _min_slack(gamma, P, reading):
    out = None
    for v in slacks(gamma, P, reading).values():
        out = v if out is None else np.minimum(out, v)
    return out


def feasible_parameters(gamma: float, reading: str = "per-regime", n: int = GRID_POINTS) -> SearchResult:
    """Grid search over the six free exponents, then Nelder-Mead on the minimal slack.

    Grid points sit at cell centres of each stated interval.  The best grid
    point (first in lexicographic order among ties) seeds the polish.
    """
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    B = _bounds(gamma)
    axes = [B[k][0] + (B[k][1] - B[k][0]) * (np.arange(n) + 0.5) / n for k in FREE]
    best_val, best_idx = -np.inf, None
    nd = len(FREE) - 1
    # broadcastable axes: each slack only grows to the dimensions it uses
    rest = [ax.reshape([-1 if d == j else 1 for d in range(nd)]) for j, ax in enumerate(axes[1:])]
    shape = (n,) * nd
    for i, w in enumerate(axes[0]):
        P = dict(zip(FREE, [w] + rest))
        ms = np.broadcast_to(_min_slack(gamma, P, reading), shape)
        j = int(np.argmax(ms))
        if ms.flat[j] > best_val:
            best_val = float(ms.flat[j])
            best_idx = (i,) + np.unravel_index(j, ms.shape)
    x0 = np.array([axes[d][best_idx[d]] for d in range(len(FREE))])

    def neg(x):
        return -float(_min_slack(gamma, dict(zip(FREE, x)), reading))

    sol = optimize.minimize(neg, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000, "maxfev": 8000})
    x = sol.x if -sol.fun >= best_val else x0
    P = dict(zip(FREE, (float(v) for v in x)))
    P["delta"] = float(default_delta(gamma, P["omega"]))
    P["p"] = float(derived_p(gamma, P["omega"], P["a"], P["kappa"]))
    tup = ParameterTuple(**P)
    S = {k: float(v) for k, v in slacks(gamma, tup, reading).items()}
    name = min(S, key=S.get)
    ms = S[name]
    feas = ms > SLACK_MIN
    return SearchResult(gamma=float(gamma), feasible=feas, witness=tup if feas else None,
                        min_slack=ms, tightest=name, slacks=S, reading=reading)


def check_tuple(gamma: float, tup: ParameterTuple, reading: str = "per-regime"):
    """``(ok, name_of_tightest, slack)`` for a user-supplied tuple."""
    S = {k: float(v) for k, v in slacks(gamma, tup, reading).items()}
    name = min(S, key=S.get)
    return S[name] > 0, name, S[name]


@dataclass
class WeightSet:
    """``theta(t)``, ``w_o(r, t)`` and ``v(t)`` for a parameter tuple."""

    ctx: GammaContext
    tup: ParameterTuple
    t0: float = 100.0
    C_tau: float = 10.0
    t_max: float = 1e9

    def __post_init__(self):
        self._traj = mu_dynamics.mu0_trajectory(self.ctx, self.t0, self.t_max, 32)

    def tau(self, t):
        return rates.tau_of_t(self._traj, t, self.t0, self.C_tau)

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        tp = self.tup
        mu0 = mu_dynamics.mu0_leading(self.ctx, t)[0]
        R = t**tp.omega
        return self.tau(t) ** (-tp.kappa) / mu0 * R ** (-1.0 - tp.a)

    def w_o(self, r, t):
        r = np.asarray(r, dtype=float)
        th = self.theta(t)
        inner = r <= np.sqrt(t)
        return th * np.where(inner, 1.0, t / np.where(inner, 1.0, r * r))

    def v(self, t):
        tau = self.tau(t)
        R0 = tau**self.tup.delta
        return tau ** (-self.tup.kappa) * R0**-5.0


def eval_weights(ctx, tup: ParameterTuple, r, t, t0: float = 100.0, C_tau: float = 10.0):
    """``(theta(t), w_o(r, t), v(t))`` with tau from the leading-order scale."""
    if not isinstance(ctx, GammaContext):
        ctx = GammaContext(float(ctx))
    if np.any(np.asarray(t) < t0):
        raise ValueError("t must not precede t0")
    W = WeightSet(ctx, tup, t0, C_tau, t_max=max(float(np.max(t)) * 1.01, t0 * 10))
    return W.theta(t), W.w_o(r, t), W.v(t)
