import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laplacecert.certificate import Ellipsoid, certify
from laplacecert.experiments import make_logistic
from laplacecert.model import QuadraticModel
from laplacecert.oracle import (
    OracleUnavailable,
    PosteriorOracle,
    concentration_frequency,
    elliptic_set_distance,
    empirical_tv,
    numeric_kl,
    posterior_expectation,
)
from laplacecert.solver import fit_pmle


def gaussian_fit(p, scale=50.0):
    rng = np.random.default_rng(p)
    U, _ = np.linalg.qr(rng.standard_normal((p, p)))
    A = scale * (U * rng.uniform(0.5, 2.0, p)) @ U.T
    model = QuadraticModel(A, rng.normal(0, 3, p), n=int(scale))
    return model, fit_pmle(model, None)


def tilted_oracle(n, c, step=0.01):
    """Scalar posterior ``exp(-n u^2/2 + c u^3)`` around a mode at the origin."""
    model = QuadraticModel(np.array([[float(n)]]), np.zeros(1), n=n)
    fit = fit_pmle(model, None)
    return fit, PosteriorOracle(fit, density_fn=lambda P: -0.5 * n * P[:, 0] ** 2 + c * P[:, 0] ** 3, step=step)


# Gaussian posteriors -----------------------------------------------------------


@pytest.mark.parametrize("p", [1, 2, 3])
def test_gaussian_mean_is_mode_and_second_moment_is_trace(p):
    model, fit = gaussian_fit(p)
    oracle = PosteriorOracle(fit, model, None)
    np.testing.assert_allclose(oracle.mean().value, fit.mode_reduced, atol=1e-8)
    second = posterior_expectation(oracle, lambda P: np.sum((P - fit.mode_reduced) ** 2, axis=1))
    assert second.value == pytest.approx(np.trace(np.linalg.inv(fit.DG2)), rel=1e-4)
    assert oracle.reliable


@pytest.mark.parametrize("p", [1, 2])
def test_gaussian_distances_vanish(p):
    model, fit = gaussian_fit(p)
    oracle = PosteriorOracle(fit, model, None)
    tv, tv_sym = empirical_tv(oracle, fit.mode_reduced, fit.DG2)
    assert tv.value <= 1e-6 and tv_sym.value <= 1e-6
    assert numeric_kl(oracle, fit.mode_reduced, fit.DG2).value <= 1e-8


def test_gaussian_elliptic_distance_shrinks_with_grid():
    # the grid radial CDF is a step function, so a matched Gaussian sits at the grid floor
    model, fit = gaussian_fit(2)
    vals = [elliptic_set_distance(PosteriorOracle(fit, model, None, step=s), fit.mode_reduced, np.eye(2),
                                  fit.DG2).value for s in (0.2, 0.1, 0.05)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] <= 5e-3


def test_gaussian_concentration_below_exponential_bound():
    model, fit = gaussian_fit(2)
    oracle = PosteriorOracle(fit, model, None)
    for x in (1.0, 3.0, 5.0):
        r = 2 * math.sqrt(2) + math.sqrt(2 * x)
        out = concentration_frequency(oracle, Ellipsoid(fit.mode_reduced, fit.DG2, r))
        assert out.value <= math.exp(-x)


def test_one_dim_logistic_mean_against_dense_trapezoid():
    model = make_logistic(300, 1, seed=4)
    fit = fit_pmle(model, np.ones(1))
    oracle = PosteriorOracle(fit, model, np.ones(1))
    sd = 1 / math.sqrt(fit.DG2[0, 0])
    grid = fit.mode_reduced[0] + np.linspace(-15 * sd, 15 * sd, 1_000_001)
    logf = model.loglik_many(grid[:, None]) - 0.5 * grid ** 2
    w = np.exp(logf - logf.max())
    mean = np.trapezoid(w * grid, grid) / np.trapezoid(w, grid)
    assert oracle.mean().value[0] == pytest.approx(mean, abs=1e-9)
    assert oracle.mean().error < 1e-8


# asymmetric posteriors ------------------------------------------------------


def test_cubic_tilt_symmetric_tv_below_borel():
    fit, oracle = tilted_oracle(100, 20.0)
    tv, tv_sym = empirical_tv(oracle, fit.mode_reduced, fit.DG2)
    assert 0 < tv_sym.value < tv.value < 1


def test_elliptic_distance_grows_with_centre_shift():
    model, fit = gaussian_fit(1)
    oracle = PosteriorOracle(fit, model, None)
    sd = 1 / math.sqrt(fit.DG2[0, 0])
    vals = [elliptic_set_distance(oracle, fit.mode_reduced + t * sd, np.eye(1), fit.DG2).value
            for t in (0.0, 0.2, 0.5, 1.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_kl_directions_differ_on_asymmetric_posterior():
    fit, oracle = tilted_oracle(100, 30.0)
    fwd = numeric_kl(oracle, fit.mode_reduced, fit.DG2, "forward").value
    rev = numeric_kl(oracle, fit.mode_reduced, fit.DG2, "reverse").value
    assert fwd > 0 and rev > 0 and fwd != rev


def test_normaliser_shift_invariance():
    fit, base = tilted_oracle(100, 10.0)
    shifted = PosteriorOracle(fit, density_fn=lambda P: -50 * P[:, 0] ** 2 + 10 * P[:, 0] ** 3 + 7.0, step=0.01)
    assert shifted.log_norm - base.log_norm == pytest.approx(7.0, abs=1e-10)
    np.testing.assert_allclose(shifted.weights, base.weights, rtol=1e-12)


def test_normaliser_of_gaussian_matches_closed_form():
    model, fit = gaussian_fit(2)
    oracle = PosteriorOracle(fit, model, None)
    v = fit.mode_reduced
    expected = model.loglik(v) + math.log(2 * math.pi) - 0.5 * np.linalg.slogdet(fit.DG2)[1]
    assert oracle.log_norm == pytest.approx(expected, abs=1e-8)


# importance sampling ---------------------------------------------------------


def test_importance_sampling_agrees_with_quadrature():
    model = make_logistic(500, 2, seed=6)
    fit = fit_pmle(model, np.ones(2))
    quad = PosteriorOracle(fit, model, np.ones(2)).mean()
    imp = PosteriorOracle(fit, model, np.ones(2), mode="importance", n_draws=100_000, seed=1).mean()
    assert np.all(np.abs(imp.value - quad.value) <= 3 * imp.error + quad.error)
    assert imp.extras["ess"] > 10_000


def test_importance_sampling_is_seeded():
    model = make_logistic(200, 3, seed=1)
    fit = fit_pmle(model, np.ones(3))
    a = PosteriorOracle(fit, model, np.ones(3), mode="importance", n_draws=5000, seed=3).mean().value
    b = PosteriorOracle(fit, model, np.ones(3), mode="importance", n_draws=5000, seed=3).mean().value
    np.testing.assert_array_equal(a, b)


def test_importance_mode_refuses_grid_tv():
    model = make_logistic(200, 2, seed=1)
    fit = fit_pmle(model, np.ones(2))
    oracle = PosteriorOracle(fit, model, np.ones(2), mode="importance", n_draws=5000)
    with pytest.raises(OracleUnavailable):
        empirical_tv(oracle, fit.mode_reduced, fit.DG2)
    assert elliptic_set_distance(oracle, fit.mode_reduced, np.eye(2), fit.DG2).value >= 0


def test_quadrature_limited_to_three_dimensions():
    model = make_logistic(200, 4, seed=1)
    fit = fit_pmle(model, np.ones(4))
    with pytest.raises(ValueError):
        PosteriorOracle(fit, model, np.ones(4))


# invariants ------------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(30, 400), ridge=st.floats(0.1, 10.0))
def test_distances_are_bounded_and_ordered(seed, n, ridge):
    model = make_logistic(n, 1, seed=seed)
    fit = fit_pmle(model, np.full(1, ridge))
    oracle = PosteriorOracle(fit, model, np.full(1, ridge), step=0.02)
    tv, tv_sym = empirical_tv(oracle, fit.mode_reduced, fit.DG2)
    assert 0 <= tv_sym.value <= tv.value <= 1
    assert numeric_kl(oracle, fit.mode_reduced, fit.DG2).value >= 0
    assert elliptic_set_distance(oracle, fit.mode_reduced, np.eye(1), fit.DG2).value >= 0


def test_grid_tv_below_certificate_on_valid_instance():
    model = make_logistic(2000, 1, seed=11)
    fit = fit_pmle(model, np.ones(1))
    cert = certify(fit, model, x=3.0)
    assert cert.all_conditions_hold
    oracle = PosteriorOracle(fit, model, np.ones(1))
    tv, tv_sym = empirical_tv(oracle, fit.mode_reduced, fit.DG2)
    assert tv.value + tv.error <= cert.tv_bound_borel
    assert tv_sym.value + tv_sym.error <= cert.tv_bound_symmetric
