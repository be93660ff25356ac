import math

import numpy as np
import pytest
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from hmflow import corrector as C
from hmflow import heat4d, kernels
from hmflow import mu_dynamics as M

DENOM = 0.24411588590704353


def zero(rho):
    return np.zeros_like(np.asarray(rho, dtype=float))


# --- projection denominator -----------------------------------------------

def test_denominator_two_rules_agree():
    a = C.projection_denominator()
    b = C.projection_denominator_gl()
    assert abs(a - b) < 1e-10
    assert a == pytest.approx(DENOM, abs=1e-14)


def test_denominator_inner_piece_closed_form():
    # on [0, 1] the cutoff is 1 and int rho^3/(rho^2+1)^2 = (ln 2 - 1/2)/2
    val, _ = integrate.quad(lambda x: x**3 / (x * x + 1) ** 2, 0, 1, epsrel=1e-14)
    assert val == pytest.approx(0.5 * (math.log(2) - 0.5), rel=1e-13)


# --- orthogonality functional ---------------------------------------------

def test_M_of_zero_is_zero():
    assert C.eval_M(heat4d.GammaContext(2.0), 1.0, 1e4, zero) == 0.0


@pytest.mark.parametrize("mu,t", [(1.0, 1e4), (0.5, 1e6), (3.0, 1e3)])
def test_M_of_constant_against_closed_form(mu, t):
    # int_0^inf 8 rho^3/(rho^2+1)^3 d rho = 2; the cutoff removes O(mu^2/t)
    c = 1.7
    got = C.eval_M(heat4d.GammaContext(2.0), mu, t, lambda r: c + 0 * np.asarray(r))
    sq = math.sqrt(t)
    ref = c * integrate.quad(lambda x: 8 * x**3 / (x * x + 1) ** 3 * float(kernels.eval_cutoff(mu * x / sq)),
                             0, 2 * sq / mu, points=[1.0, sq / mu], limit=200, epsrel=1e-12)[0]
    assert got == pytest.approx(ref, rel=1e-9)
    assert abs(got / c - 2.0) < 8 * mu**2 / t


def test_M_antiderivative():
    F = lambda x: -4 / (x * x + 1) + 2 / (x * x + 1) ** 2
    assert F(1e300) - F(0.0) == pytest.approx(2.0)
    val, _ = integrate.quad(lambda x: 8 * x**3 / (x * x + 1) ** 3, 0, 5)
    assert val == pytest.approx(F(5.0) - F(0.0), rel=1e-12)


# --- source construction ----------------------------------------------------

def test_zero_source():
    H = C.build_Htilde(heat4d.GammaContext(2.0), 1.0, 1e4, zero, 0.0)
    rho = np.geomspace(1e-3, 150, 50)
    assert np.all(H(rho) == 0)
    assert H.support == pytest.approx(200.0)


def test_projection_makes_source_orthogonal():
    ctx = heat4d.GammaContext(2.0)
    mu, t = 0.8, 1e4
    f = lambda r: 1.0 / (1.0 + 0.01 * np.asarray(r) ** 2)
    Mv = C.eval_M(ctx, mu, t, f)
    H = C.build_Htilde(ctx, mu, t, f, Mv)
    g = lambda x: float(H(np.array([x]))[0] * kernels.eval_kernels_ZZt(x)[0] * x)
    pts = [1.0, 2.0, math.sqrt(t) / mu]
    val = integrate.quad(g, 0, H.support, points=pts, limit=400, epsrel=1e-12)[0]
    mag = integrate.quad(lambda x: abs(g(x)), 0, H.support, points=pts, limit=400, epsrel=1e-12)[0]
    assert abs(val) < 1e-9 * mag


# --- solver ------------------------------------------------------------------

def _manufactured():
    f = lambda r: r * np.exp(-r * r)

    def Lf(r):
        r = np.asarray(r, dtype=float)
        e = np.exp(-r * r)
        pot = (r**4 - 6 * r * r + 1) / (r * (r * r + 1) ** 2)
        return (4 * r**3 - 8 * r + 1 / r) * e - pot * e

    return f, Lf


def test_manufactured_solution_recovered():
    f, Lf = _manufactured()
    prof = C.solve_Phi_e(Lf, 20.0)
    rho = prof.rho_grid[(prof.rho_grid > 0.01) & (prof.rho_grid < 10)]
    Z = kernels.eval_kernels_ZZt(rho)[0]
    d = prof(rho) - f(rho)
    a = float(np.dot(d, Z) / np.dot(Z, Z))
    assert a == pytest.approx(-1.0, abs=1e-6)
    assert np.max(np.abs(d - a * Z)) < 1e-6


def test_zero_source_gives_zero_profile():
    prof = C.solve_Phi_e(zero, 50.0, per_decade=100)
    assert np.all(prof.values == 0) and np.all(prof.d_rho == 0)


def test_linearity():
    f, Lf = _manufactured()
    H2 = lambda r: np.asarray(r) / (1 + np.asarray(r) ** 4)
    a, b = 2.5, -0.75
    p1 = C.solve_Phi_e(Lf, 30.0, per_decade=200)
    p2 = C.solve_Phi_e(H2, 30.0, per_decade=200)
    p = C.solve_Phi_e(lambda r: a * Lf(r) + b * H2(r), 30.0, per_decade=200)
    scale = np.max(np.abs(p.values))
    assert np.max(np.abs(p.values - (a * p1.values + b * p2.values))) < 1e-10 * scale


def test_cubic_vanishing_at_origin():
    f, Lf = _manufactured()
    prof = C.solve_Phi_e(Lf, 20.0)
    rho = np.array([1e-6, 1e-5, 1e-4 * 0.5])
    c = prof(rho) / rho**3
    assert np.allclose(c, c[0], rtol=1e-12)
    near = prof.rho_grid[:5]
    assert np.allclose(prof.values[:5] / near**3, prof.values[0] / near[0] ** 3, rtol=1e-3)


def test_profile_refuses_extrapolation():
    prof = C.solve_Phi_e(_manufactured()[1], 5.0, per_decade=100)
    with pytest.raises(ValueError):
        prof(6.0)


def test_singular_source_rejected():
    with pytest.raises(ValueError):
        C.solve_Phi_e(lambda r: 1 / np.asarray(r), 10.0)
    with pytest.raises(ValueError):
        C.solve_Phi_e(lambda r: np.ones_like(np.asarray(r, dtype=float)), 10.0)
    with pytest.raises(ValueError):
        C.solve_Phi_e(zero, 1e-5)


def test_residual_converges_second_order():
    f, Lf = _manufactured()
    errs = [C.residual_check(C.solve_Phi_e(Lf, 20.0, per_decade=n), Lf) for n in (200, 400, 800)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) > 1.9
    assert C.residual_check(C.solve_Phi_e(Lf, 20.0), Lf) < 1e-5


# --- realistic source --------------------------------------------------------

@pytest.fixture(scope="module")
def realistic():
    ctx = heat4d.GammaContext(1.5)
    t = 1e4
    mu = float(M.mu0_leading(ctx, t)[0])
    sq = math.sqrt(t)
    r = np.geomspace(1e-3 * min(mu, 1.0), 2.002 * sq, 96)
    interp = PchipInterpolator(np.log(r), heat4d.eval_psi_star(1.5, r, t))

    def f(rho):
        return interp(np.maximum(np.log(np.maximum(mu * np.asarray(rho, dtype=float), 1e-300)), np.log(r[0])))

    Mv = C.eval_M(ctx, mu, t, f)
    H = C.build_Htilde(ctx, mu, t, f, Mv)
    prof = C.solve_Phi_e(H, H.support, t)
    return ctx, mu, t, H, prof


def test_realistic_residual(realistic):
    *_, H, prof = realistic
    assert C.residual_check(prof, H) < 1e-5


def test_realistic_orthogonality(realistic):
    _, mu, t, H, prof = realistic
    rho = prof.rho_grid
    Z = kernels.eval_kernels_ZZt(rho)[0]
    integrand = H(rho) * Z * rho
    # trapezoid in ln rho
    u = np.log(rho)
    val = np.trapezoid(integrand * rho, u)
    mag = np.trapezoid(np.abs(integrand) * rho, u)
    assert abs(val) < 1e-6 * mag


def test_realistic_no_log_growth(realistic):
    *_, prof = realistic
    for rho in (1e2, 1e3):
        if rho < prof.rho_max:
            assert abs(float(prof(rho))) / (rho * math.log(rho)) < 1e-6


def test_realistic_envelope_shape(realistic):
    # |Phi_e| <= K mu_0 rho^3 <rho>^-3 min(t^{-g/2} <rho>^-1 ln(rho+2), t^{-g/2} ln ln t / ln t)
    _, mu, t, H, prof = realistic
    g = 1.5
    rho = np.geomspace(1e-2, 0.9 * prof.rho_max, 60)
    jr = np.sqrt(1 + rho * rho)
    L = math.log(t)
    env = mu * rho**3 / jr**3 * np.minimum(t ** (-g / 2) / jr * np.log(rho + 2), t ** (-g / 2) * math.log(L) / L)
    K = np.max(np.abs(prof(rho)) / env)
    assert K < 50


def test_time_derivative_of_scaled_family():
    f, Lf = _manufactured()
    base = C.solve_Phi_e(Lf, 10.0, per_decade=200)
    make = lambda s: C.CorrectionProfile(base.rho_grid, s**2 * base.values, s**2 * base.d_rho, s)
    d = C.time_derivative(make, 3.0)
    # d/dt t^2 = 2t, exact for a centred difference of a quadratic
    assert np.allclose(d.values, 6.0 * base.values, rtol=1e-10, atol=1e-15)


# --- refinement of the scale ---------------------------------------------------

def test_refine_drives_synthetic_functional_to_zero():
    ts = np.geomspace(1e2, 1e4, 9)
    target = 1 + 1 / np.log(ts)
    M_of = lambda mu: (mu - target) * (1 + 0.3 * mu) / ts
    mu, hist = C.refine_mu_bar0(ts, 2 * target, M_of, damping=1.0, iterations=12)
    assert np.allclose(mu, target, rtol=1e-8)
    assert hist[-1] < 1e-8 * hist[0]


def test_refine_damped_monotone_and_validated():
    ts = np.geomspace(1e2, 1e4, 5)
    M_of = lambda mu: mu - 1.0
    _, hist = C.refine_mu_bar0(ts, np.full(5, 1.5), M_of, damping=0.5, iterations=6)
    assert all(b < a for a, b in zip(hist, hist[1:]))
    with pytest.raises(ValueError):
        C.refine_mu_bar0(ts, np.ones(4), M_of)
    with pytest.raises(ValueError):
        C.refine_mu_bar0(ts, np.ones(5), M_of, damping=0.0)
