"""Long-time rate post-processing: the tau clock, power-log fits and verdicts.

Series are fitted to ``y ~ A t^beta (ln t)^sigma`` by least squares of
``ln y`` on ``{1, ln t, ln ln t}``.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .heat4d import GammaContext

__all__ = [
    "RateModel",
    "Verdict",
    "tau_of_t",
    "fit_rate",
    "trichotomy_verdict",
    "predicted_exponents",
    "FILA_KING_N4",
]

MIN_SAMPLES = 30
MIN_DECADES = 1.5
# condition number of the scaled design matrix beyond which the fit is refused
MAX_CONDITION = 1e12

# beta / sigma tolerances used to label a fitted gradient series
BETA_FLAT = 0.05
SIGMA_LOG = 0.5

# N = 4 row of the Fila-King diagram for the critical heat equation
FILA_KING_N4 = {
    "sub": "t^{-(2-g)/2} ln t",
    "critical": "1",
    "super": "ln t",
}


def tau_of_t(traj, t, t0: float, C_tau: float = 10.0, rtol: float = 1e-11) -> np.ndarray:
    """``tau(t) = int_{t0}^t mu^{-2} ds + C_tau t0 mu^{-2}(t0)``.

    ``traj`` is anything with a vectorised ``mu(t)`` method (a
    :class:`~hmflow.mu_dynamics.MuTrajectory`) or a plain callable.  The
    integral is taken in ``ln s`` by adaptive quadrature between
    consecutive sorted requests and accumulated.
    """
    mu = getattr(traj, "mu", traj)
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < t0):
        raise ValueError("tau is defined for t >= t0")
    t_max = getattr(traj, "t_max", None)
    if t_max is not None and np.any(ts > t_max * (1 + 1e-12)):
        raise ValueError("t outside the trajectory range")
    order = np.argsort(ts)

    def integrand(u):
        s = math.exp(u)
        return s / float(mu(s)) ** 2

    out = np.empty_like(ts)
    acc = C_tau * t0 / float(mu(t0)) ** 2
    prev = t0
    for i in order:
        if ts[i] > prev:
            val, _ = integrate.quad(integrand, math.log(prev), math.log(ts[i]),
                                    epsabs=0.0, epsrel=rtol, limit=200)
            acc += val
            prev = ts[i]
        out[i] = acc
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class RateModel:
    """Fit ``y = A t^beta (ln t)^sigma`` over ``window``."""

    A: float
    beta: float
    sigma: float
    residual: float
    window: tuple
    n: int
    form: str = "power-log"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.A * t**self.beta * np.log(t) ** self.sigma


def fit_rate(t: Sequence[float], y: Sequence[float], model_class: str = "power-log",
             window_decades: Optional[float] = None) -> RateModel:
    """Least-squares power-log fit of a positive series.

    ``model_class="power-log"`` fits all three coefficients; ``"power"``
    fixes ``sigma = 0`` and ``"log"`` fixes ``beta = 0``.  With
    ``window_decades`` only the trailing part of the series is used.
    The residual is the RMS misfit of ``ln y``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError("t and y must have equal length")
    if window_decades is not None:
        sel = t >= t[-1] / 10.0**window_decades
        t, y = t[sel], y[sel]
    if t.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {t.size}")
    if np.any(t <= math.e) or np.any(y <= 0):
        raise ValueError("fit needs t > e and positive y")
    span = math.log10(t.max() / t.min())
    if span < MIN_DECADES - 1e-9:
        raise ValueError(f"fit window spans {span:.2f} decades, need {MIN_DECADES}")
    lt = np.log(t)
    cols = {"c": np.ones_like(lt), "beta": lt, "sigma": np.log(lt)}
    if model_class == "power-log":
        names = ["c", "beta", "sigma"]
    elif model_class == "power":
        names = ["c", "beta"]
    elif model_class == "log":
        names = ["c", "sigma"]
    else:
        raise ValueError(f"unknown model class {model_class!r}")
    X = np.stack([cols[k] for k in names], axis=1)
    scale = np.linalg.norm(X, axis=0)
    Xs = X / scale
    if np.linalg.cond(Xs) > MAX_CONDITION:
        raise np.linalg.LinAlgError("degenerate design matrix")
    ly = np.log(y)
    coef, *_ = np.linalg.lstsq(Xs, ly, rcond=None)
    coef = coef / scale
    fitted = dict(zip(names, coef))
    res = float(np.sqrt(np.mean((X @ coef - ly) ** 2)))
    return RateModel(A=math.exp(fitted["c"]), beta=float(fitted.get("beta", 0.0)),
                     sigma=float(fitted.get("sigma", 0.0)), residual=res,
                     window=(float(t.min()), float(t.max())), n=int(t.size), form=model_class)


def predicted_exponents(gamma: float):
    """Predicted ``(beta, sigma)`` of ``||v_r||_inf`` and the label of its behaviour."""
    ctx = GammaContext(gamma)
    if ctx.regime == "sub":
        return (gamma - 2.0) / 2.0, 1.0, "decaying"
    if ctx.regime == "critical":
        return 0.0, 0.0, "bounded"
    return 0.0, 1.0, "log-growing"


def classify(model: RateModel) -> str:
    """Label a fitted gradient series from its exponents."""
    if model.beta > BETA_FLAT:
        return "growing"
    if model.beta < -BETA_FLAT:
        return "decaying"
    if model.sigma > SIGMA_LOG:
        return "log-growing"
    if model.sigma < -SIGMA_LOG:
        return "log-decaying"
    return "bounded"


@dataclass(frozen=True)
class Verdict:
    gamma: float
    regime: str
    label: str
    expected: str
    model: RateModel
    beta_pred: float
    sigma_pred: float

    @property
    def matches(self) -> bool:
        return self.label == self.expected

    def table(self) -> str:
        """Markdown table of predicted versus fitted behaviour."""
        g = self.gamma
        rows = [
            "| regime | Theorem (grad norm) | Fila-King N=4 | predicted beta | fitted beta | fitted sigma | verdict |",
            "|---|---|---|---|---|---|---|",
        ]
        forms = {"sub": "t^{(g-2)/2} ln t", "critical": "1", "super": "ln t"}
        for reg in ("sub", "critical", "super"):
            if reg == self.regime:
                fb = f"{self.model.beta:.4f}"
                fs = f"{self.model.sigma:.4f}"
                pb = f"{self.beta_pred:.4f}"
                ver = f"{self.label} ({'match' if self.matches else 'mismatch'})"
            else:
                fb = fs = pb = ver = "-"
            rows.append(f"| {reg} | {forms[reg]} | {FILA_KING_N4[reg]} | {pb} | {fb} | {fs} | {ver} |")
        head = f"gamma = {g:g}; window [{self.model.window[0]:.6g}, {self.model.window[1]:.6g}], " \
               f"residual {self.model.residual:.3e}\n\n"
        return head + "\n".join(rows) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gamma", "regime", "label", "expected", "beta_pred", "sigma_pred",
                    "A", "beta", "sigma", "residual", "t_lo", "t_hi", "n"])
        m = self.model
        w.writerow([f"{self.gamma:.17g}", self.regime, self.label, self.expected,
                    f"{self.beta_pred:.17g}", f"{self.sigma_pred:.17g}", f"{m.A:.17g}",
                    f"{m.beta:.17g}", f"{m.sigma:.17g}", f"{m.residual:.17g}",
                    f"{m.window[0]:.17g}", f"{m.window[1]:.17g}", m.n])
        return buf.getvalue()


def trichotomy_verdict(ctx, t, grad_norm, window_decades: float = 2.0) -> Verdict:
    """Classify a ``||v_r||_inf`` series and compare with the predicted regime."""
    if not isinstance(ctx, GammaContext):
        ctx = GammaContext(float(ctx))
    t = np.asarray(t, dtype=float)
    y = np.asarray(grad_norm, dtype=float)
    span = math.log10(t[-1] / t[0])
    model = fit_rate(t, y, window_decades=min(window_decades, span))
    beta_p, sigma_p, expected = predicted_exponents(ctx.gamma)
    return Verdict(gamma=ctx.gamma, regime=ctx.regime, label=classify(model), expected=expected,
                   model=model, beta_pred=beta_p, sigma_pred=sigma_p)
