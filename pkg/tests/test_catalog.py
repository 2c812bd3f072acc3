import numpy as np
import pytest
from scipy import stats

from crpred.bounds import Predictor, cr_bound_unbiased
from crpred.catalog import (ar1_prediction, bernoulli, exponential_family_builder, gaussian_location,
                            get_entry, parse_id, poisson, uniform_scale)
from crpred.errors import ConfigError, NormalizationError
from crpred.expectation import IntegrationSpec, expect
from crpred.families import Bernoulli, GaussianLocation
from crpred.l2diff import fisher_information, score
from crpred.model import ParameterDomain, likelihood_ratio, sample
from crpred.reconstruction import reconstruct, straight_path

QUAD = IntegrationSpec.quadrature()
EXACT = IntegrationSpec.exact()


def test_gaussian_location_closed_forms():
    e = gaussian_location(10)
    assert e.closed_forms["fisher"](np.array([0.3]))[0, 0] == 10
    assert fisher_information(e.model, 0.3).value.item() == pytest.approx(10, abs=1e-8)
    x = np.linspace(-1, 1, 10)
    assert score(e.model, 0.2, x)[0] == pytest.approx(e.closed_forms["score"](x, np.array([0.2]))[0], rel=1e-12)
    b = cr_bound_unbiased(e.model, 0.3, e.predictands["theta"])
    assert b.value.item() == pytest.approx(e.closed_forms["bound_theta"], abs=1e-8)


@pytest.mark.parametrize("entry,theta", [(bernoulli(3), 0.3), (poisson(2), 1.7)])
def test_discrete_fisher_closed_forms(entry, theta):
    t = np.array([theta])
    assert fisher_information(entry.model, t, EXACT).value.item() == pytest.approx(
        entry.closed_forms["fisher"](t)[0, 0], rel=1e-8)
    assert cr_bound_unbiased(entry.model, t, entry.predictands["theta"], EXACT).value.item() == pytest.approx(
        entry.closed_forms["bound_theta"](t), rel=1e-8)


@pytest.mark.parametrize("entry,theta0,theta", [(bernoulli(2), 0.5, 0.3), (poisson(3), 1.0, 2.5)])
def test_exponential_closed_forms_reproduce_density_ratio(entry, theta0, theta):
    t0, t = np.array([theta0]), np.array([theta])
    x = entry.model.enumerate_support(t0, 1e-12)[:5]
    ratio = likelihood_ratio(entry.model, t0, t, x)
    p = entry.predictors["mean"].value(x)[:, 0]
    expected = np.exp(entry.closed_forms["A_mean"](t, t0) * p - entry.closed_forms["B_theta"](t, t0))
    np.testing.assert_allclose(ratio, expected, rtol=1e-10)


def test_ar1_stationary_moments():
    e = ar1_prediction(5)
    x = sample(e.model, 0.5, 50_000, 2).observations
    var = stats.describe(x[:, 0]).variance
    assert var == pytest.approx(e.closed_forms["stationary_variance"](np.array([0.5])), rel=0.03)
    assert e.joint is not None and e.joint.model.obs_dim == 6


def test_uniform_scale_entry():
    e = uniform_scale()
    assert e.model.domain.dimension == 1
    assert e.predictors["max"].value(np.array([[0.2, 0.7, 0.1]]))[0, 0] == 0.7


def _gaussian_tilt(check_grid, B=None):
    base = GaussianLocation(1)
    p = Predictor(lambda x: x[:, :1], 1, "x")
    A = lambda t: t
    B = B or (lambda x, t: np.full(x.shape[0], 0.5 * t[0] ** 2))
    return exponential_family_builder(p, A, B, base, 0.0, ParameterDomain(1), check_grid, QUAD)


def test_builder_round_trip_gaussian():
    e = _gaussian_tilt([0.25, 0.5, 1.0])
    assert not e.closed_forms["fisher_singular"] and e.warnings == ()
    g = e.predictands["efficient_target"]
    for theta in (0.25, 0.5, 1.0):
        r = reconstruct(e.model, straight_path([0.0], [theta], 40), g, QUAD, predictor=e.predictors["x"])
        assert r.A_theta[0] == pytest.approx(theta, abs=1e-5)
        b, _ = r.B_with_error(np.array([[-1.0], [0.5], [2.0]]), 1)
        np.testing.assert_allclose(b, 0.5 * theta ** 2, atol=1e-5)


def test_builder_flags_degenerate_A():
    base = GaussianLocation(1)
    p = Predictor(lambda x: x[:, :1], 1, "x")
    e = exponential_family_builder(p, lambda t: np.zeros(1), lambda x, t: np.zeros(x.shape[0]), base, 0.0,
                                   ParameterDomain(1), [0.0, 0.5], QUAD)
    assert e.closed_forms["fisher_singular"] and e.warnings
    assert "efficient_target" not in e.predictands


def test_builder_bernoulli_natural_round_trip():
    base = Bernoulli(1)
    p = Predictor(lambda x: x[:, :1], 1, "x")
    # relative to Bernoulli(1/2): f_eta / f_half = exp(eta x - log((1 + e^eta)/2))
    A = lambda t: t
    B = lambda x, t: np.full(x.shape[0], np.log((1 + np.exp(t[0])) / 2))
    e = exponential_family_builder(p, A, B, base, 0.5, ParameterDomain(1), [-1.0, 0.0, 1.5], EXACT)
    g = e.predictands["efficient_target"]
    # the efficient target is the mean parameter sigmoid(eta)
    xs = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(g.value(xs, np.array([1.5]))[:, 0], 1 / (1 + np.exp(-1.5)), rtol=1e-6)
    r = reconstruct(e.model, straight_path([0.0], [1.5], 40), g, EXACT, predictor=p)
    assert r.A_theta[0] == pytest.approx(1.5, abs=1e-5)
    assert expect(e.model, 1.5, lambda xb: xb[:, 0], EXACT).value.item() == pytest.approx(
        1 / (1 + np.exp(-1.5)), rel=1e-10)


def test_builder_rejects_unnormalized_family():
    with pytest.raises(NormalizationError):
        _gaussian_tilt([0.5], B=lambda x, t: np.zeros(x.shape[0]))


def test_parse_and_get_entry():
    assert parse_id("gaussian_location:n=5,sigma=2") == ("gaussian_location", {"n": 5, "sigma": 2.0})
    assert parse_id("uniform_scale") == ("uniform_scale", {})
    e = get_entry("gaussian_location:n=5,sigma=2")
    assert e.closed_forms["bound_theta"] == pytest.approx(0.8)
    assert get_entry("gaussian_mean:dim=3").model.domain.dimension == 3
    for bad in ("nosuch", "gaussian_location:m=3", "gaussian_location:n=x", "poisson:n"):
        with pytest.raises(ConfigError):
            parse_id(bad)
    with pytest.raises(ConfigError):
        get_entry("gaussian_location:n=0")
