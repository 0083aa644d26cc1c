import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laplacecert.certificate import (
    PreconditionError,
    certify,
    classify_dimension,
    concentration_radius,
    critical_dimension_report,
    diamond2,
    diamond3,
    diamond4,
    kl_bounds,
    posterior_mean_bound,
    tv_from_diamond,
)
from laplacecert.experiments import make_logistic
from laplacecert.model import QuadraticModel, SmoothnessConstants
from laplacecert.oracle import PosteriorOracle, numeric_kl
from laplacecert.solver import fit_pmle


def quadratic_fit(n, p, tau3=None, x=10.0, nu=2 / 3):
    """A p-dimensional quadratic model with D^2 = n I, no penalty and, optionally, an imposed tau3."""
    model = QuadraticModel(n * np.eye(p), np.zeros(p), n=n)
    fit = fit_pmle(model, None)
    smooth = None
    if tau3 is not None:
        r = 2 * math.sqrt(p) + math.sqrt(2 * x)
        smooth = SmoothnessConstants(tau3=tau3, tau4=None, radius=r / nu, n=n, source="analytic", certified=True)
    return model, fit, certify(fit, model, x=x, nu=nu, smoothness=smooth)


# error terms ----------------------------------------------------------------


def test_gaussian_model_has_zero_error_terms():
    _, _, cert = quadratic_fit(100, 3, x=5.0)
    assert cert.diamond2 == 0.0 and cert.diamond3 == 0.0
    assert cert.tv_bound_borel_simple == pytest.approx(4 * math.exp(-5.0), rel=1e-14)
    assert cert.all_conditions_hold


def test_diamond2_reference():
    assert diamond2(0.1, 4) == pytest.approx(1 / 3, rel=1e-14)


def test_diamond3_reference():
    value = diamond3(0.02, 3, 0.05)
    assert value == pytest.approx(0.16 / (4 * 0.95 ** 1.5), rel=1e-14)
    assert value == pytest.approx(0.043199, abs=5e-7)


def test_diamond4_reference():
    assert diamond4(0.02, 0.004, 3, 0.05) == pytest.approx(0.012327, abs=5e-7)


def test_tv_from_missing_diamond_is_vacuous():
    assert tv_from_diamond(None, 3.0) == (1.0, 1.0)
    assert tv_from_diamond(math.inf, 3.0) == (1.0, 1.0)


# radius ---------------------------------------------------------------------


def test_radius_examples():
    assert concentration_radius(9, 0)[0] == pytest.approx(6.0)
    assert concentration_radius(4, 0)[0] == pytest.approx(2 * math.sqrt(4))
    assert concentration_radius(0, 8)[0] == pytest.approx(math.sqrt(16))


def test_radius_description_carries_ellipsoid_and_omega_status():
    r, desc = concentration_radius(1, 2, nu=0.5, center=[0.0], metric=[[4.0]], omega=0.5)
    assert desc["local_radius"] == pytest.approx(r / 0.5)
    assert desc["ellipsoid"].contains([[r / 0.5 / 2 - 1e-9]])[0]
    assert not desc["omega_condition"].satisfied


def test_radius_rejects_bad_inputs():
    with pytest.raises(ValueError):
        concentration_radius(-1, 1)
    with pytest.raises(ValueError):
        concentration_radius(1, 1, nu=1.5)


# KL and posterior mean -------------------------------------------------------


def test_kl_forward_simple_reference():
    _, _, cert = quadratic_fit(10_000, 3, tau3=0.01, x=10.0)
    assert cert.p_eff == pytest.approx(3.0, rel=1e-12)
    assert cert.kl_bound_simple == pytest.approx(0.160182, abs=5e-7)
    assert cert.kl_bound <= cert.kl_bound_simple


def test_reverse_kl_with_given_constant():
    _, _, cert = quadratic_fit(10_000, 3, tau3=0.01, x=10.0)
    kl = kl_bounds(cert, C_ell=2.0)
    assert kl.reverse == pytest.approx(0.01 * 8 + 4 * math.exp(-10.0), rel=1e-12)


def test_mean_bound_reference_with_q_equal_d():
    _, _, cert = quadratic_fit(10_000, 3, tau3=0.01, x=10.0)
    assert posterior_mean_bound(cert, C=0.0) == pytest.approx(0.192, rel=1e-12)
    assert posterior_mean_bound(cert, C=1.0) == pytest.approx(0.192 + math.exp(-10.0), rel=1e-12)


def test_mean_bound_rejects_q_beyond_d():
    _, _, cert = quadratic_fit(100, 2, tau3=0.01)
    with pytest.raises(PreconditionError):
        posterior_mean_bound(cert, Q=2 * np.sqrt(100) * np.eye(2))


def test_mean_bound_infinite_outside_gaussian_regime():
    _, _, cert = quadratic_fit(100, 3, tau3=0.5)
    assert not cert.gaussian_valid
    assert posterior_mean_bound(cert) == math.inf


# classification --------------------------------------------------------------


def test_classification_examples():
    assert classify_dimension(2, 1e6, 1e-3, 3.0)["classification"] == "gaussian-approx-valid"
    assert classify_dimension(100, 1e4, 1e-2, 3.0)["classification"] == "gap-region"
    assert classify_dimension(50, 50, 1e-6, 3.0)["classification"] == "invalid"


def test_classification_concentration_only():
    # concentration holds, Gaussian condition fails, p below n^{1/3}
    res = classify_dimension(4, 1e6, 0.08, 1.0)
    assert res["classification"] == "concentration-valid"
    assert res["p_cubed_over_n"] == pytest.approx(64 / 1e6)


def test_critical_dimension_report_matches_certificate():
    _, _, cert = quadratic_fit(10_000, 3, tau3=0.01)
    rep = critical_dimension_report(cert)
    assert rep["classification"] == cert.classification == "gaussian-approx-valid"


# invariants ------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(tau3=st.floats(1e-4, 0.5), p=st.floats(0.5, 50), omega=st.floats(0, 0.9),
       bump=st.floats(1.01, 3.0))
def test_error_terms_monotone(tau3, p, omega, bump):
    assert diamond3(tau3 * bump, p, omega) >= diamond3(tau3, p, omega)
    assert diamond3(tau3, p * bump, omega) >= diamond3(tau3, p, omega)
    assert diamond2(omega, p * bump) >= diamond2(omega, p)
    w2 = min(0.95, omega * bump + 1e-3)
    assert diamond3(tau3, p, w2) >= diamond3(tau3, p, omega)
    assert diamond4(tau3, 0.01, p, w2) >= diamond4(tau3, 0.01, p, omega)


@settings(max_examples=60, deadline=None)
@given(d=st.floats(0, 2), x=st.floats(0, 30))
def test_sharp_tv_never_exceeds_simple(d, x):
    sharp, simple = tv_from_diamond(d, x)
    assert 0 <= sharp <= simple <= 1


@settings(max_examples=60, deadline=None)
@given(tau3=st.floats(1e-4, 0.3), p=st.floats(0.5, 30), omega=st.floats(0, 1 / 3))
def test_kl_simplification_chain(tau3, p, omega):
    assert 4 * diamond3(tau3, p, omega) <= 2 * tau3 * (p + 1) ** 1.5 * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(50, 1000), p=st.integers(1, 5),
       ridge=st.floats(0.0, 50.0), x=st.floats(0.5, 10))
def test_certificate_invariants(seed, n, p, ridge, x):
    model = make_logistic(n, p, seed=seed)
    fit = fit_pmle(model, np.full(p, ridge) if ridge > 0 else None)
    cert = certify(fit, model, x=x)
    assert 0 <= cert.p_eff <= p + 1e-9
    assert cert.tv_bound_borel <= cert.tv_bound_borel_simple
    assert cert.tv_bound_symmetric <= cert.tv_bound_borel
    assert cert.kl_bound <= cert.kl_bound_simple or math.isinf(cert.kl_bound)
    assert cert.concentration_bound == pytest.approx(math.exp(-x))
    larger, _ = concentration_radius(cert.p_eff, x + 1)
    assert larger > cert.r


def test_kl_bound_dominates_numeric_kl_for_scalar_logistic():
    model = make_logistic(2000, 1, seed=3)
    fit = fit_pmle(model, np.ones(1))
    cert = certify(fit, model, x=3.0)
    assert cert.all_conditions_hold
    oracle = PosteriorOracle(fit, model, np.ones(1))
    kl = numeric_kl(oracle, fit.mode_reduced, fit.DG2)
    assert kl.value + kl.error <= cert.kl_bound
    assert kl.value > 0
