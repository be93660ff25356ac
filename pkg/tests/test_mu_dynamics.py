import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmflow import heat4d as H
from hmflow import mu_dynamics as M


def test_log_grid_endpoints_and_density():
    ts = M.log_grid(1e2, 1e4, 10)
    assert ts[0] == pytest.approx(1e2) and ts[-1] == pytest.approx(1e4)
    assert ts.size == 21
    assert np.allclose(np.diff(np.log(ts)), math.log(10) / 10)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        M.MuTrajectory([1.0, 1.0], [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        M.MuTrajectory([1.0, 2.0], [1.0, -1.0], [0.0, 0.0])


def test_sampled_trajectory_interpolates_smooth_data():
    ts = M.log_grid(1e2, 1e6, 64)
    f = lambda t: 1 + 1 / np.log(t)
    fd = lambda t: -1 / (t * np.log(t) ** 2)
    tr = M.MuTrajectory(ts, f(ts), fd(ts), p=-1.0)
    t = np.geomspace(2e2, 5e5, 17)
    assert np.max(np.abs(tr.mu(t) / f(t) - 1)) < 1e-7
    assert np.max(np.abs(tr.mu_dot(t) / fd(t) - 1)) < 1e-5


def test_trajectory_sum():
    a = M.MuTrajectory.from_callable(lambda t: 1 + 0 * t, lambda t: 0 * t, 1e2, 1e4)
    b = M.MuTrajectory.from_callable(lambda t: 1 / t, lambda t: -1 / t**2, 1e2, 1e4)
    s = a.plus(b)
    assert s.mu(500.0) == pytest.approx(1.002)
    assert s.mu_dot(500.0) == pytest.approx(-4e-6)


# --- leading scales -------------------------------------------------------

@pytest.mark.parametrize("gamma", [1.5, 2.0, 3.0])
def test_mu0_derivative_consistent(gamma):
    ctx = H.GammaContext(gamma)
    t = np.geomspace(1e3, 1e8, 6)
    h = 1e-5 * t
    fd = (M.mu0_leading(ctx, t + h)[0] - M.mu0_leading(ctx, t - h)[0]) / (2 * h)
    assert np.allclose(M.mu0_leading(ctx, t)[1], fd, rtol=1e-6)


def test_mu0_regime_forms():
    t = 1e6
    assert M.mu0_leading(H.GammaContext(2.0), t)[0] == pytest.approx(0.5 + 1 / math.log(t))
    assert M.mu0_leading(H.GammaContext(3.0), t)[0] == pytest.approx(1 / math.log(t))
    ctx = H.GammaContext(1.5)
    c1 = 2 * ctx.C_gamma / (0.25 * 0.5)
    assert M.mu0_leading(ctx, t)[0] == pytest.approx(c1 * t**0.25 / math.log(t))


# --- memory integral ------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.floats(1e3, 1e8), st.floats(-2.0, 2.0))
def test_nonlocal_integral_constant_rate(t, c):
    # mu' = c gives c (ln(t/2) - ln cut)
    tr = M.MuTrajectory.from_callable(lambda s: 1 + 0 * np.asarray(s), lambda s: c + 0 * np.asarray(s), 1e2, 1e9)
    val = M.eval_nonlocal_integral(tr, t)
    assert val == pytest.approx(c * math.log(t / 2), rel=1e-9, abs=1e-12)


def test_nonlocal_integral_sampled_vs_exact():
    ctx = H.GammaContext(2.0)
    exact = M.mu0_trajectory(ctx, 1e2, 1e7)
    ts = exact.times
    sampled = M.MuTrajectory(ts, exact.mu_samples, exact.mu_dot_samples, p=-1.0)
    t = 3e5
    assert M.eval_nonlocal_integral(sampled, t) == pytest.approx(M.eval_nonlocal_integral(exact, t), rel=1e-5)


def test_nonlocal_integral_window_errors():
    tr = M.MuTrajectory.from_callable(lambda s: 10 + 0 * np.asarray(s), lambda s: 0 * np.asarray(s), 1e2, 1e6)
    with pytest.raises(ValueError):
        M.eval_nonlocal_integral(tr, 150.0)
    with pytest.raises(ValueError):
        M.eval_nonlocal_integral(tr, 1e3, cut=600.0)


# --- log integral ---------------------------------------------------------

def test_log_integral_against_mpmath():
    p0, t = 0.75, 1e6
    c1 = M._c1_for(p0)
    mu0 = c1 * t ** (1 - p0) / math.log(t)
    ref = mpmath.quad(lambda z: (1 - z) ** -1 * z ** (-p0) / mpmath.log(t * z), [0.5, 0.9, 0.999, 1 - mu0**2 / t])
    assert M.check_log_integral(p0, t) == pytest.approx(float(ref), rel=1e-9)


def test_log_integral_band_and_trend():
    devs = []
    for t in (1e6, 1e8, 1e10, 1e12):
        val = M.check_log_integral(0.75, t)
        devs.append(abs(val - 0.5))
    # frozen deviations, within 5/ln t and shrinking
    assert devs == pytest.approx([0.1333, 0.1304, 0.1234, 0.1158], abs=2e-3)
    assert devs[1] < 5 / math.log(1e8)
    assert all(b < a for a, b in zip(devs, devs[1:]))


def test_log_integral_half_exponent_band():
    t = 1e8
    assert abs(M.check_log_integral(0.5, t)) < 5 / math.log(t)


def test_log_integral_half_exponent_loglog_order():
    # the remainder decays like ln ln t / ln t with coefficient near 2
    q = []
    for t in np.geomspace(1e4, 1e12, 5):
        L = math.log(t)
        q.append(M.check_log_integral(0.5, t) * L / math.log(L))
    assert np.allclose(q, 1.88, atol=0.03)


def test_log_integral_squared_companion():
    q = [M.check_log_integral(0.75, t, power=2) * math.log(t) for t in np.geomspace(1e4, 1e12, 9)]
    assert max(q) < 5 and min(q) > 0


def test_nonlocal_integral_constant_trajectory_is_zero():
    tr = M.MuTrajectory.from_callable(lambda s: 1 + 0 * np.asarray(s), lambda s: 0 * np.asarray(s), 1e2, 1e6)
    assert M.eval_nonlocal_integral(tr, 1e4) == 0.0


def test_nonlocal_integral_tolerance_halving():
    ctx = H.GammaContext(1.5)
    tr = M.mu0_trajectory(ctx, 1e2, 1e7)
    a, err = M.eval_nonlocal_integral(tr, 1e5, rtol=1e-8, full_output=True)
    b = M.eval_nonlocal_integral(tr, 1e5, rtol=5e-9)
    assert abs(a - b) <= max(err, 1e-15)


def test_log_integral_errors():
    with pytest.raises(ValueError):
        M.check_log_integral(0.75, 1e6, t1=6e5)


# --- residual orders ------------------------------------------------------

def _scaled_residuals(gamma):
    ctx = H.GammaContext(gamma)
    tr = M.mu0_trajectory(ctx, 1e2, 1e9)
    out = []
    for t in np.geomspace(1e3, 1e8, 11):
        L = math.log(t)
        w = t ** (gamma / 2) * L / math.log(L) if gamma < 2 else t * L * L / math.log(L)
        out.append(M.eval_nonlocal_residual(ctx, tr, t) * w)
    return np.array(out)


@pytest.mark.parametrize("gamma,first", [(1.5, 1.4201), (2.0, -0.5879), (3.0, -2.4799)])
def test_residual_orders_of_leading_scale(gamma, first):
    s = _scaled_residuals(gamma)
    assert s[0] == pytest.approx(first, abs=2e-3)
    assert np.max(np.abs(s)) < 5
    assert abs(s[-1]) / abs(s[0]) < 1.5


# --- mu_1 model problem ---------------------------------------------------

def test_split_parameter_validation():
    ctx = H.GammaContext(2.0)
    with pytest.raises(ValueError):
        M.SplitParameters(nu=0.6, p=-1.5).validate(ctx)
    with pytest.raises(ValueError):
        M.SplitParameters(nu=0.3, p=-0.5).validate(ctx)
    M.SplitParameters.default(ctx).validate(ctx)


def test_solve_mu_zero_forcing_is_trivial():
    ctx = H.GammaContext(2.0)
    sol = M.solve_mu(ctx, horizon=(1e2, 1e4), a1=lambda ts: np.zeros_like(ts))
    assert sol.converged
    assert np.all(sol.mu1_dot == 0)


def test_solve_mu_improves_critical_residual():
    ctx = H.GammaContext(2.0)
    sol = M.solve_mu(ctx, horizon=(1e2, 1e7))
    assert sol.converged
    base = M.mu0_trajectory(ctx, 1e1, 1e8)
    r0 = abs(M.eval_nonlocal_residual(ctx, base, 1e6))
    r1 = abs(M.eval_nonlocal_residual(ctx, sol.mu, 1e6))
    assert r0 / r1 >= 5


def test_solve_mu_independent_of_initial_iterate():
    ctx = H.GammaContext(2.0)
    a = M.solve_mu(ctx, horizon=(1e2, 1e5), tol=1e-12)
    ts = a.times
    b = M.solve_mu(ctx, horizon=(1e2, 1e5), tol=1e-12, mu1_dot_init=1e-4 * ts**-1.5)
    assert np.max(np.abs(a.mu1.mu(ts) - b.mu1.mu(ts))) < 1e-8


def test_synthetic_forcing_bounded_response():
    # a_1 = t^p ln t gives a mu_1' of the same weighted size
    ctx = H.GammaContext(3.0)
    split = M.SplitParameters.default(ctx)
    sol = M.solve_mu(ctx, horizon=(1e2, 1e6), a1=lambda ts: ts**split.p * np.log(ts))
    ts = sol.times[sol.times > 1e2]
    md = sol.mu1.mu_dot(ts)
    K = np.max(np.abs(md) / ts**split.p)
    assert sol.converged and K < 2


def test_a1_norm_and_holder_quotient():
    ts = np.array([10.0, 100.0])
    v, d = M.a1_norm(ts, ts**-2 * np.log(ts), -2.0)
    assert v == pytest.approx(1.0) and d == 0
    a = 3.0
    tr = M.MuTrajectory.from_callable(lambda t: 1 + 0.5 * a * np.asarray(t) ** 2, lambda t: a * np.asarray(t), 1, 1e3)
    t, alpha, p = 100.0, 0.5, -1.0
    assert M.holder_quotient(tr, t, alpha, p) == pytest.approx(a * (t / 2) ** (1 - alpha) * t ** (alpha - p))
