import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmflow import heat4d as H
from hmflow import mu_dynamics as M
from hmflow import rates as R


T = np.geomspace(1e3, 1e6, 60)


# --- tau ------------------------------------------------------------------

def test_tau_constant_scale():
    t0 = 100.0
    t = np.array([100.0, 500.0, 1e4])
    tau = R.tau_of_t(lambda s: 1.0, t, t0)
    assert np.allclose(tau, t - t0 + 10 * t0, rtol=1e-12)


def test_tau_rejects_early_times():
    with pytest.raises(ValueError):
        R.tau_of_t(lambda s: 1.0, 50.0, 100.0)


def test_tau_unsorted_requests():
    t = np.array([1e4, 200.0, 3e3])
    assert np.allclose(R.tau_of_t(lambda s: 2.0, t, 100.0), (t - 100.0) / 4 + 250.0)


@pytest.mark.parametrize("gamma,weight", [(2.0, lambda t: t), (3.0, lambda t: t * np.log(t) ** 2)])
def test_tau_growth_orders(gamma, weight):
    ctx = H.GammaContext(gamma)
    tr = M.mu0_trajectory(ctx, 1e2, 1e8)
    t = np.geomspace(1e7, 1e8, 11)
    q = R.tau_of_t(tr, t, 100.0) / weight(t)
    assert np.all(q > 0.05) and np.all(q < 20)
    assert q.max() / q.min() < 1.5


def test_tau_increasing_and_converged():
    ctx = H.GammaContext(1.5)
    tr = M.mu0_trajectory(ctx, 1e2, 1e6)
    t = np.geomspace(1e2, 1e6, 30)
    a = R.tau_of_t(tr, t, 100.0)
    b = R.tau_of_t(tr, t, 100.0, rtol=1e-13)
    assert np.all(np.diff(a) > 0)
    assert np.max(np.abs(a / b - 1)) < 1e-8


# --- fitting --------------------------------------------------------------

def test_fit_exact_power_log():
    m = R.fit_rate(T, T**0.25 / np.log(T))
    assert m.beta == pytest.approx(0.25, abs=1e-10)
    assert m.sigma == pytest.approx(-1.0, abs=1e-9)
    assert m.residual < 1e-10


def test_fit_pure_log():
    m = R.fit_rate(T, np.log(T))
    assert m.beta == pytest.approx(0.0, abs=1e-9)
    assert m.sigma == pytest.approx(1.0, abs=1e-9)


def test_fit_leading_scale_gradient():
    ctx = H.GammaContext(1.5)
    t = np.geomspace(1e6, 1e8, 60)
    m = R.fit_rate(t, 2 / M.mu0_leading(ctx, t)[0])
    assert m.beta == pytest.approx(-0.25, abs=0.02)


@pytest.mark.parametrize("form", ["power", "log"])
def test_fit_reduced_classes_exact(form):
    y = 3 * T**0.4 if form == "power" else 3 * np.log(T) ** 2
    m = R.fit_rate(T, y, model_class=form)
    assert m.residual < 1e-10 and m.A == pytest.approx(3.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-2, 2), st.floats(1e-3, 1e3))
def test_fit_exact_on_own_class_and_scale_invariant(beta, sigma, lam):
    y = T**beta * np.log(T) ** sigma
    a = R.fit_rate(T, y)
    b = R.fit_rate(T, lam * y)
    assert a.residual < 1e-10
    assert a.beta == pytest.approx(beta, abs=1e-8)
    assert a.sigma == pytest.approx(sigma, abs=1e-7)
    assert b.beta == pytest.approx(a.beta, abs=1e-9)
    assert b.sigma == pytest.approx(a.sigma, abs=1e-8)
    assert R.classify(a) == R.classify(b)


def test_fit_input_errors():
    with pytest.raises(ValueError):
        R.fit_rate(T[:10], T[:10])
    with pytest.raises(ValueError):
        R.fit_rate(np.geomspace(1e3, 1e4, 40), np.ones(40))
    with pytest.raises(ValueError):
        R.fit_rate(T, -np.ones_like(T))
    with pytest.raises(ValueError):
        R.fit_rate(T, T, model_class="cubic")


def test_fit_window_selection():
    t = np.geomspace(1e2, 1e6, 200)
    y = np.where(t < 1e4, 1.0, t**0.5)
    m = R.fit_rate(t, y, window_decades=1.9)
    assert m.beta == pytest.approx(0.5, abs=1e-8)
    assert m.window[0] >= 1e6 / 10**1.9 * (1 - 1e-12)


# --- verdicts -------------------------------------------------------------

def test_verdict_log_growth_super():
    v = R.trichotomy_verdict(H.GammaContext(3.0), T, 2 * np.log(T))
    assert v.label == "log-growing" and v.matches


def test_verdict_bounded_critical():
    v = R.trichotomy_verdict(2.0, T, np.full_like(T, 4.0))
    assert v.label == "bounded" and v.matches


def test_verdict_decaying_sub():
    ctx = H.GammaContext(1.5)
    v = R.trichotomy_verdict(ctx, T, 2 / M.mu0_leading(ctx, T)[0])
    assert v.label == "decaying" and v.matches


def test_predicted_exponents():
    assert R.predicted_exponents(1.5)[:2] == (-0.25, 1.0)
    assert R.predicted_exponents(2.0)[2] == "bounded"
    assert R.predicted_exponents(5.0)[2] == "log-growing"


def test_verdict_table_and_csv():
    v = R.trichotomy_verdict(2.0, T, np.full_like(T, 4.0))
    tab = v.table()
    assert "| regime | Theorem (grad norm) | Fila-King N=4 |" in tab
    for form in ("t^{-(2-g)/2} ln t", "| 1 |", "| ln t |"):
        assert form in tab
    lines = v.csv().splitlines()
    assert len(lines) == 2 and lines[0].startswith("gamma,regime,label")
