import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crpred.errors import CapabilityError, DomainError, EvaluationError
from crpred.expectation import IntegrationSpec, expect
from crpred.families import Bernoulli, GaussianLocation, GaussianMean, Poisson, StationaryAR1, UniformScale
from crpred.model import (SAMPLE_CHUNK, DominatedModel, ParameterDomain, density, likelihood_ratio,
                          log_density, sample)


def test_density_examples():
    assert density(GaussianLocation(1), 0.0, 0.0) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-14)
    assert density(Bernoulli(1), 1.0, 0.5) == pytest.approx(0.5, rel=1e-14)
    assert density(Poisson(1), 0.0, 1.0) == pytest.approx(np.exp(-1), rel=1e-14)


def test_density_is_exp_log_density_and_clamps_underflow():
    m = GaussianLocation(1)
    xs = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(density(m, xs, 0.2), np.exp(log_density(m, xs, 0.2)), rtol=1e-15)
    assert density(m, 1e4, 0.0) == 0.0


def test_domain_is_open():
    with pytest.raises(DomainError):
        density(Bernoulli(1), 1.0, 1.0)
    with pytest.raises(DomainError):
        sample(Bernoulli(1), 1.0, 5, 0)
    with pytest.raises(DomainError):
        density(StationaryAR1(3), np.zeros(3), -1.0)
    d = ParameterDomain(2, (0, 0), (1, 1), predicate=lambda t: t[0] < t[1])
    assert d.contains([0.2, 0.5]) and not d.contains([0.5, 0.2]) and not d.contains([0.0, 0.5])


def test_likelihood_ratio_examples():
    m = GaussianLocation(1)
    assert likelihood_ratio(m, 0.0, 1.0, 0.0) == pytest.approx(np.exp(-0.5), rel=1e-14)
    assert likelihood_ratio(Bernoulli(1), 0.5, 0.25, 1.0) == pytest.approx(0.5, rel=1e-14)
    xs = np.linspace(-4, 4, 9)
    np.testing.assert_array_equal(likelihood_ratio(m, 0.3, 0.3, xs), np.ones(9))


def test_likelihood_ratio_conventions_on_supports():
    u = UniformScale()
    # f_theta0(x) = 0 < f_theta(x): infinite ratio
    assert likelihood_ratio(u, 1.0, 2.0, 1.5) == np.inf
    # both zero: defined as 1
    assert likelihood_ratio(u, 1.0, 2.0, 3.0) == 1.0
    assert likelihood_ratio(u, 2.0, 1.0, 1.5) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-5, 5))
def test_likelihood_ratio_reciprocity(t0, t1, x):
    m = GaussianLocation(1)
    assert likelihood_ratio(m, t0, t1, x) * likelihood_ratio(m, t1, t0, x) == pytest.approx(1.0, rel=1e-12)


def test_sample_is_deterministic_and_prefix_stable():
    m = GaussianLocation(1)
    a = sample(m, 0.0, 3, 7).observations
    b = sample(m, 0.0, 3, 7).observations
    np.testing.assert_array_equal(a, b)
    big = sample(m, 0.0, SAMPLE_CHUNK + 10, 7).observations
    np.testing.assert_array_equal(big[:3], a)
    assert not np.array_equal(sample(m, 0.0, 3, 8).observations, a)


def test_poisson_sample_mean_clt():
    x = sample(Poisson(1), 2.0, 100_000, 1).observations
    assert abs(x.mean() - 2.0) <= 3 * np.sqrt(2 / 1e5)


def test_sample_requires_sampler():
    class NoSampler(DominatedModel):
        def log_density(self, x, theta):
            return -0.5 * (x[:, 0] - theta[0]) ** 2 - 0.5 * np.log(2 * np.pi)

    m = NoSampler(ParameterDomain(1))
    with pytest.raises(CapabilityError):
        sample(m, 0.0, 3, 0)


def test_non_finite_density_is_an_evaluation_error():
    class Broken(DominatedModel):
        def log_density(self, x, theta):
            return np.full(x.shape[0], np.nan)

    m = Broken(ParameterDomain(1))
    with pytest.raises(EvaluationError):
        density(m, 0.0, 0.0)


@pytest.mark.parametrize("model,theta,spec", [
    (GaussianLocation(1), 0.7, IntegrationSpec.quadrature()),
    (GaussianLocation(3, 2.0), -1.0, IntegrationSpec.quadrature(nodes=64)),
    (GaussianMean(2), [0.5, -1.0], IntegrationSpec.quadrature(nodes=96)),
    (StationaryAR1(2), 0.5, IntegrationSpec.quadrature(nodes=96)),
    (UniformScale(), 2.0, IntegrationSpec.quadrature()),
    (Bernoulli(3), 0.3, IntegrationSpec.exact()),
    (Poisson(2), 2.5, IntegrationSpec.exact()),
])
def test_density_integrates_to_one(model, theta, spec):
    r = expect(model, theta, lambda xb: np.ones(xb.shape[0]), spec)
    assert abs(float(r.value) - 1) <= 1e-6


@pytest.mark.parametrize("model,theta0,theta,spec", [
    (GaussianLocation(1), 0.0, 0.8, IntegrationSpec.quadrature()),
    (Bernoulli(2), 0.5, 0.2, IntegrationSpec.exact()),
    (Poisson(1), 2.0, 3.0, IntegrationSpec.exact()),
])
def test_likelihood_ratio_has_unit_mean(model, theta0, theta, spec):
    r = expect(model, theta0, lambda xb: likelihood_ratio(model, theta0, theta, xb), spec)
    assert float(r.value) == pytest.approx(1.0, abs=1e-8)
