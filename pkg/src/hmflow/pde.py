"""Direct simulation of the 1-equivariant flow

    v_t = v_rr + v_r / r - sin(2 v) / (2 r^2),   v(0, t) = pi,

on a sinh-graded radial mesh with variable-step BDF2 and Newton.

The spatial operator is the conservative finite-volume form of
``(1/r)(r v_r)_r``; together with the pointwise trigonometric term it is the
exact gradient of :func:`dirichlet_energy`, so the semi-discrete flow
dissipates the discrete energy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import PchipInterpolator

from . import heat4d, kernels, mu_dynamics
from .kernels import _fd_weights_3pt

__all__ = [
    "RadialGrid",
    "State",
    "StepperConfig",
    "InstabilityError",
    "StepFailure",
    "fd_weights",
    "build_grid",
    "semidiscrete_rhs",
    "advance",
    "Stepper",
    "extract_mu",
    "dirichlet_energy",
    "regrid",
    "psi_star_boundary",
    "neumann_boundary",
]

log = logging.getLogger(__name__)


class InstabilityError(RuntimeError):
    """NaN or out-of-range angle in the solution."""


class StepFailure(RuntimeError):
    """Too many consecutive step rejections."""


def fd_weights(x):
    """Three-point first- and second-derivative weights at the interior nodes of ``x``.

    Returns arrays of shape ``(3, len(x) - 2)`` ordered (left, centre, right).
    """
    return _fd_weights_3pt(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class RadialGrid:
    """Nodes ``0 = r_0 < ... < r_N = R_max`` and the finite-volume stencil.

    ``lower``/``upper`` are the off-diagonal weights of the radial Laplacian
    at nodes ``1..N`` (the last row is the zero-flux half cell), and ``vol``
    the dual-cell measures ``int r dr``.
    """

    r: np.ndarray
    stretch: float
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    vol: np.ndarray = field(repr=False)
    d1: np.ndarray = field(repr=False)
    d2: np.ndarray = field(repr=False)
    underresolved: bool = False

    @property
    def N(self) -> int:
        return self.r.size - 1

    @property
    def R_max(self) -> float:
        return float(self.r[-1])

    @property
    def h_min(self) -> float:
        return float(np.min(np.diff(self.r)))


def _grid_from_nodes(r: np.ndarray, stretch: float, mu_min: Optional[float] = None) -> RadialGrid:
    h = np.diff(r)
    rh = 0.5 * (r[1:] + r[:-1])
    vol = np.empty(r.size)
    vol[0] = 0.5 * rh[0] ** 2
    vol[1:-1] = 0.5 * (rh[1:] ** 2 - rh[:-1] ** 2)
    vol[-1] = 0.5 * (r[-1] ** 2 - rh[-1] ** 2)
    lower = np.empty(r.size - 1)
    upper = np.zeros(r.size - 1)
    lower[:] = rh / h / vol[1:]
    upper[:-1] = rh[1:] / h[1:] / vol[1:-1]
    d1, d2 = fd_weights(r)
    under = mu_min is not None and h[0] > mu_min / 8.0
    if under:
        log.warning("grid spacing %.3g does not resolve mu_min/8 = %.3g", h[0], mu_min / 8.0)
    return RadialGrid(r=r, stretch=stretch, lower=lower, upper=upper, vol=vol, d1=d1, d2=d2,
                      underresolved=under)


def build_grid(R_max: float, N: int, stretch: float = 0.0, mu_min: Optional[float] = None) -> RadialGrid:
    """``r_j = R_max sinh(stretch j / N) / sinh(stretch)``; ``stretch = 0`` is uniform."""
    if N < 2:
        raise ValueError("need at least 3 nodes")
    x = np.linspace(0.0, 1.0, N + 1)
    if stretch > 0:
        r = R_max * np.sinh(stretch * x) / math.sinh(stretch)
    else:
        r = R_max * x
    r[0] = 0.0
    r[-1] = R_max
    return _grid_from_nodes(r, stretch, mu_min)


def stretch_for_spacing(R_max: float, N: int, h_min: float) -> float:
    """Stretch parameter giving first spacing ``h_min`` (0 if uniform suffices)."""
    target = h_min * N / R_max
    if target >= 1.0:
        return 0.0
    # first spacing ~ R_max * sinh(b/N) / sinh(b)
    f = lambda b: R_max * math.sinh(b / N) / math.sinh(b) - h_min
    return optimize.brentq(f, 1e-8, 700.0)


@dataclass
class State:
    t: float
    v: np.ndarray

    def check(self):
        if not np.all(np.isfinite(self.v)):
            raise InstabilityError(f"non-finite values at t={self.t}")
        if np.max(np.abs(self.v)) > math.pi + 0.1:
            raise InstabilityError(f"angle left [-pi-0.1, pi+0.1] at t={self.t}")


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "bdf2-newton"
    dt0: float = 1e-4
    growth: float = 1.05
    newton_tol: float = 1e-11
    max_newton: int = 20
    max_dt_fraction: float = 0.05
    max_rejections: int = 10

    def __post_init__(self):
        if self.scheme not in ("bdf2-newton", "linearly-implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        # growth == 1 gives fixed steps, used by convergence studies
        if not 1.0 <= self.growth <= 1.1:
            raise ValueError("growth factor must lie in [1, 1.1]")
        if not 0 < self.max_dt_fraction <= 0.05:
            raise ValueError("dt may not exceed 0.05 t")


def psi_star_boundary(gamma: float, R: float, t_start: float, offset: float = 0.0,
                      amplitude: float = 1.0) -> Callable[[float], float]:
    """Outer Dirichlet value ``offset + amplitude * Psi_*(R, t - t_start)``."""
    def value(t):
        return offset + amplitude * R * float(heat4d.eval_psi_star(gamma, R, max(t - t_start, 0.0)))
    return value


def neumann_boundary():
    return None


def semidiscrete_rhs(state: State, grid: RadialGrid, neumann: bool = False) -> np.ndarray:
    """Nodal ``dv/dt``; zero at the pinned origin and at a Dirichlet outer node."""
    v = state.v
    r = grid.r
    out = np.zeros_like(v)
    lap = grid.lower * (v[:-1] - v[1:])
    lap[:-1] += grid.upper[:-1] * (v[2:] - v[1:-1])
    out[1:] = lap - np.sin(2.0 * v[1:]) / (2.0 * r[1:] ** 2)
    if not neumann:
        out[-1] = 0.0
    if np.any(~np.isfinite(out)):
        raise InstabilityError(f"NaN in right-hand side at t={state.t}")
    return out


def _jacobian_bands(v, grid: RadialGrid, nfree: int):
    """Tridiagonal Jacobian of the rhs restricted to the free nodes 1..nfree."""
    r = grid.r
    diag = -(grid.lower + grid.upper)[:nfree] - np.cos(2.0 * v[1:nfree + 1]) / r[1:nfree + 1] ** 2
    sub = grid.lower[1:nfree]
    sup = grid.upper[:nfree - 1]
    return sub, diag, sup


def dirichlet_energy(state: State, grid: RadialGrid) -> float:
    """``2 pi int (v_r^2 + sin^2 v / r^2) r dr`` in the discrete form whose gradient drives the scheme."""
    v = state.v
    r = grid.r
    h = np.diff(r)
    rh = 0.5 * (r[1:] + r[:-1])
    grad = np.sum(rh * np.diff(v) ** 2 / h)
    pot = np.sum(grid.vol[1:] * np.sin(v[1:]) ** 2 / r[1:] ** 2)
    return 2.0 * math.pi * (grad + pot)


class Stepper:
    """Variable-step BDF2 integrator holding the two-level history."""

    def __init__(self, grid: RadialGrid, state: State, cfg: StepperConfig,
                 outer: Optional[Callable[[float], float]] = None):
        self.grid = grid
        self.cfg = cfg
        self.outer = outer
        self.neumann = outer is None
        v = state.v.copy()
        v[0] = math.pi
        if not self.neumann:
            v[-1] = outer(state.t)
        self.state = State(state.t, v)
        self.prev: Optional[State] = None
        self.dt = cfg.dt0
        self.dt_prev: Optional[float] = None
        self.rejections = 0
        self.accepted = 0
        self.newton_iterations = 0

    @property
    def nfree(self) -> int:
        return self.grid.N if self.neumann else self.grid.N - 1

    def _solve(self, t_new: float, dt: float):
        g = self.grid
        nf = self.nfree
        v_n = self.state.v
        if self.prev is None or self.dt_prev is None:
            a0, a1, a2 = 1.0, -1.0, 0.0
            v_m = v_n
        else:
            w = dt / self.dt_prev
            a0 = (1.0 + 2.0 * w) / (1.0 + w)
            a1 = -(1.0 + w)
            a2 = w * w / (1.0 + w)
            v_m = self.prev.v
        hist = a1 * v_n + a2 * v_m
        v = v_n.copy()
        if self.prev is not None and self.dt_prev is not None:
            # linear extrapolation as the Newton predictor
            v = v_n + (dt / self.dt_prev) * (v_n - v_m)
        v[0] = math.pi
        if not self.neumann:
            v[-1] = self.outer(t_new)
        iters = 1 if self.cfg.scheme == "linearly-implicit" else self.cfg.max_newton
        for k in range(iters):
            f = semidiscrete_rhs(State(t_new, v), g, self.neumann)
            G = a0 * v[1:nf + 1] + hist[1:nf + 1] - dt * f[1:nf + 1]
            sub, diag, sup = _jacobian_bands(v, g, nf)
            ab = np.zeros((3, nf))
            ab[0, 1:] = -dt * sup
            ab[1, :] = a0 - dt * diag
            ab[2, :-1] = -dt * sub
            delta = linalg.solve_banded((1, 1), ab, -G, check_finite=False)
            v[1:nf + 1] += delta
            self.newton_iterations += 1
            if not np.all(np.isfinite(v)):
                return None
            if np.max(np.abs(delta)) < self.cfg.newton_tol:
                return v
        return v if self.cfg.scheme == "linearly-implicit" else None

    def step(self) -> State:
        """Take one accepted step, halving dt on Newton failure."""
        fails = 0
        while True:
            dt = self.dt
            t_new = self.state.t + dt
            v = self._solve(t_new, dt)
            if v is not None:
                new = State(t_new, v)
                try:
                    new.check()
                except InstabilityError:
                    v = None
            if v is None:
                fails += 1
                self.rejections += 1
                if fails >= self.cfg.max_rejections:
                    raise StepFailure(f"{fails} consecutive rejections at t={self.state.t}")
                self.dt = 0.5 * dt
                continue
            self.prev, self.dt_prev = self.state, dt
            self.state = new
            self.accepted += 1
            self.dt = min(dt * self.cfg.growth, self.cfg.max_dt_fraction * t_new)
            return new

    def advance_to(self, t_end: float, callback: Optional[Callable] = None) -> State:
        while self.state.t < t_end * (1.0 - 1e-14):
            self.dt = min(self.dt, t_end - self.state.t)
            st = self.step()
            if callback is not None:
                callback(self, st)
        return self.state


def advance(state: State, grid: RadialGrid, cfg: StepperConfig,
            outer: Optional[Callable[[float], float]] = None, nsteps: int = 1) -> State:
    """Convenience wrapper: ``nsteps`` steps from a fresh BDF2 start."""
    st = Stepper(grid, state, cfg, outer)
    for _ in range(nsteps):
        st.step()
    return st.state


def _gradient(v, grid: RadialGrid):
    """Nodal ``v_r``; at the origin from the odd expansion ``v - pi = a r + b r^3``."""
    r = grid.r
    g = np.empty_like(v)
    g[1:-1] = np.sum(grid.d1 * np.stack([v[:-2], v[1:-1], v[2:]]), axis=0)
    g[-1] = (v[-1] - v[-2]) / (r[-1] - r[-2])
    r1, r2 = r[1], r[2]
    w1, w2 = v[1] - v[0], v[2] - v[0]
    g[0] = (w1 * r2**3 - w2 * r1**3) / (r1 * r2**3 - r2 * r1**3)
    return g


@dataclass(frozen=True)
class MuEstimate:
    mu_grad: float
    mu_fit: float
    grad_norm: float
    valid: bool = True

    def __iter__(self):
        return iter((self.mu_grad, self.mu_fit))


def extract_mu(state: State, grid: RadialGrid) -> MuEstimate:
    """Scale estimates ``2 / max |v_r|`` and a least-squares fit of ``Q_mu``."""
    v = state.v
    r = grid.r
    g = np.abs(_gradient(v, grid))
    k = int(np.argmax(g))
    gmax = float(g[k])
    valid = k < grid.N - 2
    mu_grad = 2.0 / gmax
    sel = r <= 10.0 * mu_grad
    rs, vs = r[sel], v[sel]

    def resid(p):
        return vs - (math.pi - 2.0 * np.arctan(rs / p[0]))

    sol = optimize.least_squares(resid, x0=[mu_grad], bounds=([1e-12], [np.inf]),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return MuEstimate(mu_grad=mu_grad, mu_fit=float(sol.x[0]), grad_norm=gmax, valid=valid)


def regrid(v: np.ndarray, old: RadialGrid, new: RadialGrid) -> np.ndarray:
    """Monotone-cubic transfer of nodal values to a new grid."""
    f = PchipInterpolator(old.r, v)
    out = f(np.clip(new.r, 0.0, old.R_max))
    out[0] = math.pi
    return out


@dataclass
class RunResult:
    """Time series and snapshots of a simulation."""

    gamma: float
    t0: float
    T: float
    grid: RadialGrid
    series: dict
    snapshots: list
    state: State
    regrids: int = 0
    rejections: int = 0
    status: str = "completed"

    SERIES_COLUMNS = ("t", "mu_est_grad", "mu_est_fit", "grad_norm", "energy", "dt")

    def column(self, name) -> np.ndarray:
        return np.asarray(self.series[name])


def default_mesh(gamma: float, t0: float, T: float, N: Optional[int] = None,
                 R_max: Optional[float] = None, resolve: float = 16.0):
    """Mesh sized from the scenario's leading-order scale envelope.

    The smallest anticipated scale is the minimum of ``mu_0`` over the
    horizon (which for ``gamma < 2`` is its value at ``t0``); the first
    spacing resolves it by ``resolve`` nodes.
    """
    ctx = heat4d.GammaContext(gamma)
    ts = np.geomspace(t0, T, 64)
    mu_min = float(np.min(mu_dynamics.mu0_leading(ctx, ts)[0]))
    if R_max is None:
        R_max = 8.0 * math.sqrt(T)
    if N is None:
        N = 2000
    h_min = mu_min / resolve
    return build_grid(R_max, N, stretch_for_spacing(R_max, N, h_min), mu_min=mu_min), mu_min


def aligned_initial_data(gamma: float, mu_init: float, r0: float, t0: float, r) -> np.ndarray:
    """``eta(r/r0) Q_{mu_init} + Psi_*(r, t0)``: the leading ansatz at the initial time."""
    r = np.asarray(r, dtype=float)
    v = kernels.eval_cutoff(r / r0) * kernels.eval_Q(mu_init, r)[0] + r * heat4d.eval_psi_star(gamma, r, t0)
    v[r == 0] = math.pi
    return v


def run(gamma: float, t0: float = 100.0, T: float = 1e5, *, N: Optional[int] = None,
        R_max: Optional[float] = None, grid: Optional[RadialGrid] = None,
        cfg: Optional[StepperConfig] = None, outer: str = "dirichlet",
        mu_init: Optional[float] = None, r0: Optional[float] = None,
        snapshots_per_decade: int = 4, record_every: int = 1, data: str = "aligned",
        mu_floor: float = 1e-3, max_regrids: int = 4) -> RunResult:
    """Integrate the flow from ``t0`` to ``T`` and record scale diagnostics.

    Initial data families: ``"aligned"`` is ``eta(r/r0) Q_{mu_init} +
    Psi_*(r, t0)`` with the outer feed ``Psi_*(R_max, t)``; ``"blend"`` is
    ``eta(r/r0) Q_{mu_init} + r <r>^{-gamma}`` with feed ``Psi_*(R_max, t - t0)``.
    ``mu_init`` defaults to ``mu_0(t0)`` and ``r0`` to ``sqrt(t0)``;
    ``outer="neumann"`` swaps the feed for zero flux.

    The run stops early with ``status="collapsed"`` once the core scale
    drops below ``mu_floor`` or would need more than ``max_regrids``
    refinements, and with ``status="step-failure"`` if Newton keeps failing.
    """
    if not T > t0 > 0:
        raise ValueError("need T > t0 > 0")
    ctx = heat4d.GammaContext(gamma)
    if grid is None:
        grid, _ = default_mesh(gamma, t0, T, N, R_max)
    if mu_init is None:
        mu_init = float(mu_dynamics.mu0_leading(ctx, t0)[0])
    if r0 is None:
        r0 = math.sqrt(t0)
    cfg = cfg or StepperConfig(dt0=1e-3 * min(mu_init, 1.0) ** 2)
    if data == "blend":
        v0 = kernels.InitialData(gamma, mu_init, r0)(grid.r)
        t_feed = t0
    elif data == "aligned":
        v0 = aligned_initial_data(gamma, mu_init, r0, t0, grid.r)
        t_feed = 0.0
    else:
        raise ValueError(f"unknown initial data family {data!r}")
    if outer == "dirichlet":
        feed = psi_star_boundary(gamma, grid.R_max, t_feed)
    elif outer == "neumann":
        feed = None
    else:
        raise ValueError(f"unknown outer boundary {outer!r}")
    stepper = Stepper(grid, State(t0, v0), cfg, feed)

    series = {k: [] for k in RunResult.SERIES_COLUMNS}
    snaps = []
    snap_times = list(np.geomspace(t0, T, max(2, int(round(snapshots_per_decade * math.log10(T / t0)))) + 1))
    regrids = 0

    def record(st: Stepper, state: State, dt: float):
        est = extract_mu(state, st.grid)
        series["t"].append(state.t)
        series["mu_est_grad"].append(est.mu_grad)
        series["mu_est_fit"].append(est.mu_fit)
        series["grad_norm"].append(est.grad_norm)
        series["energy"].append(dirichlet_energy(state, st.grid))
        series["dt"].append(dt)
        return est

    record(stepper, stepper.state, 0.0)
    snaps.append((t0, grid.r.copy(), stepper.state.v.copy()))
    snap_times.pop(0)
    k = 0
    status = "completed"
    while stepper.state.t < T * (1.0 - 1e-14):
        target = min(T, snap_times[0]) if snap_times else T
        stepper.dt = min(stepper.dt, target - stepper.state.t)
        t_before = stepper.state.t
        try:
            state = stepper.step()
        except StepFailure as exc:
            log.warning("run aborted: %s", exc)
            status = "step-failure"
            break
        k += 1
        dt = state.t - t_before
        last = state.t >= T * (1.0 - 1e-14)
        if k % record_every == 0 or last:
            est = record(stepper, state, dt)
            if est.mu_grad < mu_floor:
                status = "collapsed"
                break
            if est.mu_grad < 4.0 * stepper.grid.h_min:
                if regrids >= max_regrids:
                    status = "collapsed"
                    break
                stepper = _regridded(stepper, est.mu_grad)
                regrids += 1
        if snap_times and state.t >= snap_times[0] * (1.0 - 1e-12):
            snaps.append((state.t, stepper.grid.r.copy(), state.v.copy()))
            snap_times.pop(0)
    return RunResult(gamma=gamma, t0=t0, T=T, grid=stepper.grid, series=series, snapshots=snaps,
                     state=stepper.state, regrids=regrids, rejections=stepper.rejections,
                     status=status)


def _regridded(stepper: Stepper, mu_est: float) -> Stepper:
    """Refine the core so that the current scale again spans 16 first cells."""
    old = stepper.grid
    N = old.N
    new = build_grid(old.R_max, N, stretch_for_spacing(old.R_max, N, mu_est / 16.0))
    log.info("regrid at t=%.6g: h_min %.3g -> %.3g", stepper.state.t, old.h_min, new.h_min)
    fresh = Stepper(new, State(stepper.state.t, regrid(stepper.state.v, old, new)), stepper.cfg,
                    stepper.outer)
    if stepper.prev is not None:
        fresh.prev = State(stepper.prev.t, regrid(stepper.prev.v, old, new))
        fresh.dt_prev = stepper.dt_prev
    fresh.dt = stepper.dt
    fresh.rejections = stepper.rejections
    return fresh
