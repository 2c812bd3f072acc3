import numpy as np
import pytest

from crpred.errors import AbsoluteContinuityError, CapabilityError, CoverageError, IntegrandError
from crpred.expectation import (IntegrationSpec, box_growth, deterministic_spec, expect,
                                expect_under_shifted, mc_draws)
from crpred.families import Bernoulli, GaussianLocation, GaussianMean, Poisson, UniformScale

N01 = GaussianLocation(1)


def x1(xb):
    return xb[:, 0]


def test_spec_validation():
    with pytest.raises(ValueError):
        IntegrationSpec.quadrature(nodes=14)
    with pytest.raises(ValueError):
        IntegrationSpec.monte_carlo(99, 0)
    with pytest.raises(ValueError):
        IntegrationSpec("simpson")
    assert IntegrationSpec.exact().deterministic and not IntegrationSpec.monte_carlo(100, 0).deterministic


def test_deterministic_spec_choice():
    assert deterministic_spec(Bernoulli(3)).mode == "exact_discrete"
    assert deterministic_spec(GaussianMean(4)).mode == "quadrature"
    assert deterministic_spec(GaussianLocation(10)) is None


def test_gaussian_mean_zero_mc():
    r = expect(N01, 0.0, x1, IntegrationSpec.monte_carlo(100_000, 3))
    assert abs(float(r.value)) <= 3 * float(r.std_error)
    assert r.n_effective == 100_000 and r.mode_used == "monte_carlo"


def test_bernoulli_exact():
    r = expect(Bernoulli(1), 0.25, x1, IntegrationSpec.exact())
    assert float(r.value) == pytest.approx(0.25, abs=1e-15)
    assert float(r.std_error) == 0.0


def test_gaussian_second_moment_quadrature():
    r = expect(N01, 0.0, lambda xb: xb[:, 0] ** 2, IntegrationSpec.quadrature())
    assert abs(float(r.value) - 1) <= 1e-8


def test_matrix_integrand_shape_and_entrywise_error():
    spec = IntegrationSpec.monte_carlo(20_000, 5)
    r = expect(GaussianMean(2), [0.0, 0.0], lambda xb: xb[:, :, None] * xb[:, None, :], spec)
    assert r.value.shape == (2, 2) and r.std_error.shape == (2, 2)
    assert np.all(r.std_error > 0)
    np.testing.assert_allclose(r.value, np.eye(2), atol=5 * r.std_error.max())


def test_determinism_all_modes():
    h = lambda xb: np.sin(xb[:, 0]) + xb[:, 0] ** 3
    for spec in (IntegrationSpec.quadrature(), IntegrationSpec.monte_carlo(5000, 9)):
        a = expect(N01, 0.3, h, spec)
        b = expect(N01, 0.3, h, spec)
        assert a.value.tobytes() == b.value.tobytes() and a.std_error.tobytes() == b.std_error.tobytes()


def test_workers_do_not_change_mc_results():
    h = lambda xb: xb[:, 0] ** 2
    one = expect(N01, 0.0, h, IntegrationSpec.monte_carlo(50_000, 4, workers=1))
    many = expect(N01, 0.0, h, IntegrationSpec.monte_carlo(50_000, 4, workers=4))
    assert one.value.tobytes() == many.value.tobytes()
    np.testing.assert_array_equal(mc_draws(N01, np.zeros(1), IntegrationSpec.monte_carlo(20_000, 4)),
                                  mc_draws(N01, np.zeros(1), IntegrationSpec.monte_carlo(20_000, 4, workers=3)))


@pytest.mark.parametrize("model,theta,spec", [
    (N01, 0.4, IntegrationSpec.quadrature()),
    (Poisson(2), 1.5, IntegrationSpec.exact()),
])
def test_linearity_in_deterministic_modes(model, theta, spec):
    h1 = lambda xb: xb[:, 0] ** 2
    h2 = lambda xb: np.cos(xb[:, 0])
    alpha = 2.5
    lhs = expect(model, theta, lambda xb: alpha * h1(xb) + h2(xb), spec).value
    rhs = alpha * expect(model, theta, h1, spec).value + expect(model, theta, h2, spec).value
    assert float(lhs) == pytest.approx(float(rhs), rel=1e-14, abs=1e-14)


def test_mc_coverage_over_100_seeds():
    # E X^2 = theta + theta^2 under Poisson(theta)
    theta = 2.0
    hits = 0
    for seed in range(100):
        r = expect(Poisson(1), theta, lambda xb: xb[:, 0] ** 2, IntegrationSpec.monte_carlo(2000, seed))
        hits += abs(float(r.value) - 6.0) <= 3 * float(r.std_error)
    assert hits >= 95


def test_integrand_error_on_positive_mass():
    with pytest.raises(IntegrandError):
        expect(N01, 0.0, lambda xb: np.where(xb[:, 0] > 0, np.inf, 0.0), IntegrationSpec.quadrature())
    with pytest.raises(IntegrandError):
        expect(N01, 0.0, lambda xb: np.full(xb.shape[0], np.nan), IntegrationSpec.monte_carlo(100, 0))


def test_coverage_error_for_narrow_box():
    with pytest.raises(CoverageError):
        expect(N01, 0.0, x1, IntegrationSpec.quadrature(width=2.0))


def test_capability_errors():
    with pytest.raises(CapabilityError):
        expect(Bernoulli(1), 0.5, x1, IntegrationSpec.quadrature())
    with pytest.raises(CapabilityError):
        expect(GaussianLocation(5), 0.0, x1, IntegrationSpec.quadrature())


def test_shifted_examples():
    assert float(expect_under_shifted(N01, 0.0, 0.5, lambda xb: np.ones(xb.shape[0]),
                                      IntegrationSpec.quadrature()).value) == pytest.approx(1, abs=1e-8)
    r = expect_under_shifted(N01, 0.0, 0.5, x1, IntegrationSpec.monte_carlo(100_000, 2))
    assert abs(float(r.value) - 0.5) <= 3 * float(r.std_error)
    r = expect_under_shifted(Bernoulli(1), 0.5, 0.25, x1, IntegrationSpec.exact())
    assert float(r.value) == pytest.approx(0.25, abs=1e-15)


def test_shifted_agrees_with_direct():
    h = lambda xb: xb[:, 0] ** 3
    spec = IntegrationSpec.quadrature()
    direct = float(expect(N01, 0.7, h, spec).value)
    shifted = float(expect_under_shifted(N01, 0.2, 0.7, h, spec).value)
    assert shifted == pytest.approx(direct, rel=1e-8)


def test_shifted_rejects_missing_absolute_continuity():
    with pytest.raises(AbsoluteContinuityError):
        expect_under_shifted(UniformScale(), 1.0, 2.0, x1, IntegrationSpec.monte_carlo(1000, 0))
    with pytest.raises(AbsoluteContinuityError):
        expect_under_shifted(UniformScale(), 1.0, 2.0, x1, IntegrationSpec.quadrature())


def test_box_growth_flags_divergent_moment():
    spec = IntegrationSpec.quadrature()
    stable = box_growth(N01, 0.0, lambda xb: xb[:, 0] ** 2, spec)
    assert max(stable) - min(stable) < 1e-10
    grows = box_growth(N01, 0.0, lambda xb: np.exp(xb[:, 0] ** 2 / 2), spec)
    assert grows[-1] > 2 * grows[0]
