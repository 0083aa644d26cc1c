import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp, mpf

from laplacecert.experiments import make_logdensity, make_logistic
from laplacecert.model import (
    LogDensityModel,
    LogisticModel,
    QuadraticModel,
    bernoulli_sampler,
    design_constants,
    empirical_omega,
    logdensity_constants,
    logdensity_cumulant,
    logdensity_sampler,
    logistic_loglik,
    logistic_smoothness,
    phi_derivatives,
)

SQRT_E = math.sqrt(math.e)


# logistic log-likelihood and phi ------------------------------------------------


def test_loglik_single_positive_label():
    m = LogisticModel(np.ones((1, 1)), np.ones(1))
    assert logistic_loglik(m, np.zeros(1)) == pytest.approx(-math.log(2), rel=1e-15)


def test_loglik_single_negative_label():
    m = LogisticModel(np.ones((1, 1)), np.zeros(1))
    assert m.loglik(np.zeros(1)) == pytest.approx(-math.log(2), rel=1e-15)


def test_loglik_two_observations_high_precision():
    mp.dps = 40
    ref = mpf(3) - mp.log(1 + mp.e ** 3) - mp.log(1 + mp.e ** -3)
    m = LogisticModel(np.array([[1.0], [-1.0]]), np.array([1.0, 0.0]))
    assert m.loglik(np.array([3.0])) == pytest.approx(float(ref), rel=1e-14)


def test_phi_derivatives_at_zero():
    vals = [phi_derivatives(0.0, k) for k in range(5)]
    assert vals == pytest.approx([math.log(2), 0.5, 0.25, 0.0, -0.125], abs=1e-16)


def test_phi_derivatives_match_high_precision_differentiation():
    mp.dps = 30
    for v in (-7.5, -1.2, 0.3, 4.0, 19.0):
        for k in range(5):
            ref = mp.diff(lambda t: mp.log(1 + mp.e ** t), mpf(v), k)
            assert phi_derivatives(v, k) == pytest.approx(float(ref), rel=1e-10, abs=1e-300)


def test_phi_derivative_domination_grid():
    grid = np.linspace(-20, 20, 20001)
    d2 = phi_derivatives(grid, 2)
    assert np.all(np.abs(phi_derivatives(grid, 3)) <= d2)
    assert np.all(np.abs(phi_derivatives(grid, 4)) <= d2)


def test_phi_second_derivative_saturates():
    assert phi_derivatives(800.0, 2) == 0.0
    assert phi_derivatives(40.0, 2) < 1e-17
    assert phi_derivatives(-800.0, 0) == 0.0
    assert phi_derivatives(800.0, 0) == 800.0


@settings(max_examples=200, deadline=None)
@given(v0=st.floats(-25, 25), b=st.floats(0, 1), frac=st.floats(-1, 1))
def test_phi_second_derivative_variability(v0, b, frac):
    assert phi_derivatives(v0 + frac * b, 2) <= math.exp(b) * phi_derivatives(v0, 2) * (1 + 1e-12)


# design constants and logistic smoothness --------------------------------------


def test_design_constants_orthonormal_design():
    n = 6
    m = LogisticModel(np.eye(n), np.zeros(n))
    dc = design_constants(m, np.zeros(n))
    np.testing.assert_allclose(m.hessian(np.zeros(n)), np.eye(n) / 4, atol=1e-15)
    assert dc.C_n == pytest.approx(2 * math.sqrt(n), rel=1e-12)


def test_design_constants_single_observation_needs_ridge():
    m = LogisticModel(np.array([[1.0, 2.0]]), np.ones(1))
    with pytest.raises(np.linalg.LinAlgError):
        design_constants(m, np.zeros(2))


def test_design_constants_bracket_gaussian_design():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((500, 5))
    m = LogisticModel(X, (rng.random(500) < 0.5).astype(float))
    dc = design_constants(m, np.zeros(5))
    assert dc.C_psi_lower <= dc.C_psi <= dc.C_n
    assert dc.C_psi <= 2 * dc.C_psi_lower
    assert dc.C_n <= 10 * math.sqrt(5 + math.log(500))


def test_logistic_smoothness_constants_follow_design():
    model = make_logistic(400, 2, seed=1)
    v = np.zeros(2)
    sm = logistic_smoothness(model, v, r=1.0)
    dc = design_constants(model, v)
    assert sm.c3 == pytest.approx(SQRT_E * dc.C_psi)
    assert sm.tau3 == pytest.approx(sm.c3 / math.sqrt(400))
    assert sm.omega_bound() == pytest.approx(sm.c3 * (1.0 / (2 / 3)) / (3 * math.sqrt(400)))


def test_logistic_smoothness_guard_fails_for_large_radius():
    model = make_logistic(400, 2, seed=1)
    dc = design_constants(model, np.zeros(2))
    nu = 2 / 3
    r = 0.6 * nu * math.sqrt(400) / dc.C_n  # C_n r / (nu sqrt n) = 0.6
    sm = logistic_smoothness(model, np.zeros(2), r=r, nu=nu)
    assert not sm.certified
    assert not sm.guards[0]["satisfied"]


# empirical omega -------------------------------------------------------------


def test_empirical_omega_vanishes_for_quadratic():
    m = QuadraticModel(np.diag([2.0, 3.0]), np.array([1.0, -1.0]))
    assert empirical_omega(m, np.zeros(2), 1.0) == pytest.approx(0.0, abs=1e-12)


def test_empirical_omega_below_analytic_bound_1d():
    model = make_logistic(50, 1, seed=4)
    v = np.zeros(1)
    est = empirical_omega(model, v, r=2.0)
    sm = logistic_smoothness(model, v, r=2.0)
    assert est <= sm.omega_bound()


def test_empirical_omega_nested_radii_monotone():
    model = make_logistic(200, 2, seed=2)
    vals = [empirical_omega(model, np.zeros(2), r) for r in (0.5, 1.0, 2.0, 4.0)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


# derivative checks ------------------------------------------------------------


def _fd_grad(f, v, h=1e-6):
    out = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        out[i] = (f(v + e) - f(v - e)) / (2 * h)
    return out


@pytest.mark.parametrize("factory", [
    lambda: make_logistic(300, 3, seed=9),
    lambda: make_logdensity(300, 3, seed=9),
])
def test_gradient_and_hessian_match_finite_differences(factory):
    model = factory()
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = 0.5 * rng.standard_normal(model.dim)
        g = model.grad(v)
        fd = _fd_grad(model.loglik, v)
        assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))
    for _ in range(10):
        v = 0.5 * rng.standard_normal(model.dim)
        H = model.hessian(v)
        cols = []
        for i in range(model.dim):
            e = np.zeros(model.dim)
            e[i] = 1e-5
            cols.append(-(model.grad(v + e) - model.grad(v - e)) / 2e-5)
        fdH = np.column_stack(cols)
        assert np.linalg.norm(fdH - H) <= 1e-5 * np.linalg.norm(H)


@pytest.mark.parametrize("factory", [
    lambda: make_logistic(300, 3, seed=10),
    lambda: make_logdensity(300, 3, seed=10),
])
def test_concavity_and_stochastic_linearity(factory):
    model = factory()
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((2, model.dim)) * 0.4
    for v in (a, b):
        assert np.linalg.eigvalsh(model.hessian(v))[0] >= 0
    np.testing.assert_allclose(model.grad(a) - model.expected_grad(a), model.grad(b) - model.expected_grad(b),
                               rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(model.grad(a) - model.expected_grad(a), model.score(), rtol=1e-9, atol=1e-9)


def test_logistic_fisher_and_variance_formulas():
    model = make_logistic(200, 2, seed=3)
    v = np.array([0.2, -0.1])
    eta = model.X @ v
    w = phi_derivatives(eta, 2)
    np.testing.assert_allclose(model.hessian(v), (model.X * w[:, None]).T @ model.X, rtol=1e-13)
    th = model.theta_star
    np.testing.assert_allclose(model.variance_matrix(), (model.X * (th * (1 - th))[:, None]).T @ model.X, rtol=1e-13)


def test_logistic_hessian_variability():
    model = make_logistic(2000, 2, seed=8)
    v = np.zeros(2)
    dc = design_constants(model, v)
    nu = 2 / 3
    r = 0.45 * nu * math.sqrt(model.n) / dc.C_n
    D2 = model.hessian(v)
    w, U = np.linalg.eigh(D2)
    root_inv = (U / np.sqrt(w)) @ U.T
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.standard_normal(2)
        u = root_inv @ (d / np.linalg.norm(d)) * r * rng.random()
        diff = SQRT_E * D2 - model.hessian(v + u)
        assert np.linalg.eigvalsh(diff)[0] >= -1e-10


# log-density -------------------------------------------------------------------


def test_cosine_basis_at_zero_is_orthonormal():
    m = LogDensityModel("cosine", 4, np.array([0.5]))
    phi, grad, hess = logdensity_cumulant(m, np.zeros(4))
    assert phi == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(grad, 0.0, atol=1e-13)
    np.testing.assert_allclose(hess, np.eye(4), atol=1e-12)


def test_linear_basis_uniform_moments():
    m = LogDensityModel("monomial", 1, np.array([0.5]))
    phi, grad, hess = m.cumulant(np.zeros(1))
    assert grad[0] == pytest.approx(0.5, rel=1e-13)
    assert hess[0, 0] == pytest.approx(1 / 12, rel=1e-12)


def test_linear_basis_cumulant_closed_form():
    m = LogDensityModel("monomial", 1, np.array([0.5]), probe_points=[[1.0]])
    assert m.cumulant(np.ones(1))[0] == pytest.approx(math.log(math.e - 1), rel=1e-13)
    assert math.log(math.e - 1) == pytest.approx(0.541325, abs=1e-6)


def test_moment_identities_against_direct_quadrature():
    m = LogDensityModel("cosine", 3, np.array([0.2, 0.7]))
    v = np.array([0.4, -0.3, 0.2])
    x = np.linspace(0, 1, 200001)
    Psi = math.sqrt(2) * np.cos(np.pi * x[:, None] * np.arange(1, 4)[None, :])
    dens = np.exp(Psi @ v)
    wts = np.full(x.size, 1.0)
    wts[0] = wts[-1] = 0.5
    wts /= wts.sum()
    Z = float(wts @ dens)
    pw = wts * dens / Z
    mean = pw @ Psi
    cov = (Psi - mean).T @ ((Psi - mean) * pw[:, None])
    phi, grad, hess = m.cumulant(v)
    assert phi == pytest.approx(math.log(Z), abs=1e-8)
    np.testing.assert_allclose(grad, mean, atol=1e-8)
    np.testing.assert_allclose(hess, cov, atol=1e-8)


def test_logdensity_constants_floor_and_zero_radius():
    m = make_logdensity(500, 1, seed=0, basis="monomial")
    v = np.zeros(1)
    small = logdensity_constants(m, v, 0.05)
    assert small.C_psi4 >= 3.0
    assert logdensity_constants(m, v, 0.0).C_rho == 1.0


def test_logdensity_constants_seed_stable():
    m = make_logdensity(500, 3, seed=0)
    v = np.zeros(3)
    a = logdensity_constants(m, v, 0.5, seed=1).c3
    b = logdensity_constants(m, v, 0.5, seed=2).c3
    assert math.isfinite(a) and math.isfinite(b)
    assert abs(a - b) <= 0.1 * max(a, b)


# samplers ---------------------------------------------------------------------


def test_bernoulli_sampler_mean():
    y = bernoulli_sampler(np.full(10_000, 0.5), seed=42)
    assert abs(y.mean() - 0.5) <= 3 * math.sqrt(0.25 / 10_000)


def test_samplers_are_deterministic():
    th = np.linspace(0.1, 0.9, 100)
    assert np.array_equal(bernoulli_sampler(th, 7), bernoulli_sampler(th, 7))
    a = logdensity_sampler(np.array([0.3, -0.2]), 500, 7)
    assert np.array_equal(a, logdensity_sampler(np.array([0.3, -0.2]), 500, 7))


def test_logdensity_sampler_uniform_at_zero():
    n = 5000
    x = np.sort(logdensity_sampler(np.zeros(2), n, seed=3))
    ecdf_hi = np.arange(1, n + 1) / n
    ks = max(np.max(ecdf_hi - x), np.max(x - (ecdf_hi - 1 / n)))
    assert ks < 1.63 / math.sqrt(n)
