import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hmflow import heat4d as H


def one(s):
    return np.ones_like(np.asarray(s, dtype=float))


ONE = H.RadialFunction(one)


# --- ring kernel ----------------------------------------------------------

def test_ring_kernel_at_origin():
    t = 3.0
    s = np.linspace(0.1, 10, 7)
    ref = (4 * math.pi * t) ** -2 * 2 * math.pi**2 * s**3 * np.exp(-s * s / (4 * t))
    assert np.allclose(H.ring_kernel(0.0, s, t), ref, rtol=1e-14)


@pytest.mark.parametrize("r,s,t", [(1.0, 2.0, 0.5), (5.0, 4.0, 3.0), (1e-4, 2.0, 1.0), (30.0, 31.0, 2.0)])
def test_ring_kernel_against_angular_quadrature(r, s, t):
    assert H.ring_kernel(r, s, t) == pytest.approx(H.ring_kernel_theta(r, s, t), rel=1e-10)


def test_small_kappa_limit():
    # exp(-k) I_1(k)/k -> 1/2
    assert float(H._ive1_over(1e-12)) == pytest.approx(0.5, rel=1e-12)
    k = np.array([1e-7, 1e-6 * 0.999, 1e-6 * 1.001])
    v = H._ive1_over(k)
    assert np.allclose(v, np.exp(-k) * (0.5 + k * k / 16), rtol=1e-12)


def test_large_kappa_branch_continuous():
    k = np.array([1e8 * (1 - 1e-9), 1e8 * (1 + 1e-9)])
    v = H._ive1_over(k)
    assert abs(v[0] / v[1] - 1) < 1e-8
    assert np.all(np.isfinite(H._ive1_over(np.array([1e12, 1e20]))))


def test_ring_kernel_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        H.ring_kernel(1.0, 1.0, 0.0)


@settings(max_examples=40)
@given(st.floats(0.01, 50), st.floats(0.01, 50), st.floats(0.05, 100))
def test_ring_kernel_positive_and_symmetric(r, s, t):
    a = float(H.ring_kernel(r, s, t))
    b = float(H.ring_kernel(s, r, t))
    assert a >= 0
    # K(r,s) s^-3 is symmetric in (r, s)
    assert a / s**3 == pytest.approx(b / r**3, rel=1e-12, abs=1e-300)


# --- initial-value convolution -------------------------------------------

@pytest.mark.parametrize("t", [1.0, 1e3, 1e6])
@pytest.mark.parametrize("k", [0.0, 1.0, 10.0])
def test_mass_conservation(t, k):
    r = k * math.sqrt(t)
    assert H.heat_convolve_initial(ONE, r, t) == pytest.approx(1.0, abs=1e-9)
    assert float(H.heat_convolve_batch(ONE, np.array([r]), t)[0]) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("r,t,a", [(0.0, 1.0, 2.0), (3.0, 5.0, 0.5), (10.0, 20.0, 4.0)])
def test_gaussian_semigroup_identity(r, t, a):
    g = H.RadialFunction(lambda s: np.exp(-np.asarray(s) ** 2 / (4 * a)))
    ref = (a / (t + a)) ** 2 * math.exp(-r * r / (4 * (t + a)))
    assert H.heat_convolve_initial(g, r, t) == pytest.approx(ref, rel=1e-9)
    assert float(H.heat_convolve_batch(g, np.array([r]), t)[0]) == pytest.approx(ref, rel=1e-9)


def test_semigroup_property():
    gamma = 1.5
    g = H._tail_function(gamma)
    t1, t2 = 3.0, 7.0
    inner = H.RadialFunction(lambda s: H.heat_convolve_batch(g, np.ravel(s), t1).reshape(np.shape(s)))
    r = np.array([0.0, 1.0, 4.0, 12.0])
    two_step = H.heat_convolve_batch(inner, r, t2)
    direct = H.eval_psi_star(gamma, r, t1 + t2)
    assert np.max(np.abs(two_step / direct - 1)) < 1e-8


def test_quadrature_error_reported():
    # a rapidly oscillating kinked source cannot be resolved to 1e-13
    g = H.RadialFunction(lambda s: np.abs(np.sin(1e3 * np.asarray(s))))
    with pytest.raises(H.QuadratureError) as exc:
        H.heat_convolve_initial(g, 0.0, 1.0, rtol=1e-13)
    assert exc.value.achieved > 0


# --- Duhamel ---------------------------------------------------------------

def test_duhamel_zero_and_unit_sources():
    zero = H.SpaceTimeSource(lambda s, tau: np.zeros_like(np.asarray(s, dtype=float)))
    unit = H.SpaceTimeSource(lambda s, tau: np.ones_like(np.asarray(s, dtype=float)))
    r = np.array([0.0, 2.0, 30.0])
    assert np.all(H.heat_convolve_duhamel(zero, r, 10.0, 1.0) == 0)
    assert np.allclose(H.heat_convolve_duhamel(unit, r, 10.0, 1.0), 9.0, rtol=1e-9)


@pytest.mark.parametrize("r", [0.0, 1.5, 6.0])
def test_duhamel_against_nested_quadrature(r):
    # source exp(-s^2/4), constant in time; the inner convolution is a Gaussian identity
    src = H.SpaceTimeSource(lambda s, tau: np.exp(-np.asarray(s) ** 2 / 4.0))
    t, t0 = 5.0, 1.0

    def slice_(tau):
        return float(H.heat_convolve_initial(H.RadialFunction(lambda s: np.exp(-np.asarray(s) ** 2 / 4)),
                                             r, tau)) if tau > 0 else math.exp(-r * r / 4)

    ref, _ = integrate.quad(lambda s: slice_(t - s), t0, t, epsabs=0, epsrel=1e-11, limit=200)
    got = float(H.heat_convolve_duhamel(src, np.array([r]), t, t0)[0])
    assert got == pytest.approx(ref, rel=1e-8)


def test_duhamel_requires_forward_time():
    unit = H.SpaceTimeSource(lambda s, tau: np.ones_like(np.asarray(s, dtype=float)))
    with pytest.raises(ValueError):
        H.heat_convolve_duhamel(unit, np.array([0.0]), 1.0, 1.0)


# --- constants --------------------------------------------------------------

@pytest.mark.parametrize("gamma,C", [(2.0, 0.25), (4.0, 1 / 16), (6.0, 1 / 32)])
def test_gamma_constants_closed_forms(gamma, C):
    assert H.gamma_constants(gamma)[0] == pytest.approx(C, rel=1e-8)


@pytest.mark.parametrize("gamma", [1.5, 3.0, 5.0])
def test_gamma_constant_against_direct_integral(gamma):
    # C = (1/8) int_0^inf s^{3-gamma} e^{-s^2/4} ds for gamma < 4, (1/8) int s^3 <s>^-gamma for gamma > 4
    if gamma < 4:
        f = lambda s: s ** (3 - gamma) * math.exp(-s * s / 4)
    else:
        f = lambda s: s**3 * (1 + s * s) ** (-gamma / 2)
    val, _ = integrate.quad(f, 0, math.inf, epsrel=1e-12)
    assert H.gamma_constants(gamma)[0] == pytest.approx(val / 8, rel=1e-9)


def test_gamma_context_regimes():
    assert H.GammaContext(1.5).regime == "sub"
    assert H.GammaContext(2.0).regime == "critical"
    assert H.GammaContext(3.0).regime == "super"
    assert H.GammaContext(4.0).v_gamma_form == "eq4"
    with pytest.raises(ValueError):
        H.GammaContext(1.0)
    with pytest.raises(ValueError):
        H.gamma_constants(0.5)


def test_v_gamma_cases():
    t = 100.0
    assert H.v_gamma(3.0, t) == pytest.approx(t**-1.5)
    assert H.v_gamma(4.0, t) == pytest.approx(math.log1p(t) / t**2)
    assert H.v_gamma(6.0, t) == pytest.approx(t**-2)


# --- psi_* ------------------------------------------------------------------

def test_psi_star_origin_gamma2_closed_form():
    for t in (1e2, 1e4, 1e6):
        assert H.eval_psi_star(2.0, 0.0, t) == pytest.approx(H.psi_star_origin_gamma2(t), rel=1e-9)
        assert H.eval_psi_star(2.0, 0.0, t, adaptive=True) == pytest.approx(H.psi_star_origin_gamma2(t), rel=1e-9)


def test_psi_star_gamma2_limit():
    t = 1e4
    assert t * H.eval_psi_star(2.0, 0.0, t) == pytest.approx(0.25, rel=0.02)


def test_g_gamma_decay_gamma2():
    ts = np.geomspace(1e2, 1e8, 13)
    q = [abs(t * H.eval_psi_star(2.0, 0.0, t) - 0.25) * t / math.log(t) for t in ts]
    # the limit of the scaled remainder is 1/16
    assert max(q) < 0.1
    assert q[-1] == pytest.approx(1 / 16, rel=0.15)


def test_psi_star_initial_profile():
    r = np.array([0.0, 1.0, 3.0])
    assert np.allclose(H.eval_psi_star(1.5, r, 0), (1 + r * r) ** -0.75)


@pytest.mark.parametrize("gamma", [1.5, 2.0, 3.0])
def test_psi_star_radially_decreasing(gamma):
    t = 50.0
    r = np.linspace(0, 5 * math.sqrt(t), 40)
    p = H.eval_psi_star(gamma, r, t)
    assert np.all(p <= p[0] * (1 + 1e-12))
    assert np.all(np.diff(p) <= 1e-15)


@pytest.mark.parametrize("gamma", [1.5, 2.0, 3.0])
def test_psi_star_inner_variation_envelope(gamma):
    Ks = []
    for t in (1e2, 1e4, 1e6):
        r = np.geomspace(1e-2, 1.0, 8) * math.sqrt(t)
        d = np.abs(H.eval_psi_star(gamma, r, t) - H.eval_psi_star(gamma, 0.0, t))
        Ks.append(np.max(d / (r / math.sqrt(t) * H.v_gamma(gamma, t))))
    assert max(Ks) < 1.0
