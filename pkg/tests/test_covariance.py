import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crpred.covariance import (DiscreteJoint, covariance_bound, equality_condition_holds,
                               project_onto_scores, random_joint, symmetric_inverse)
from crpred.errors import SingularityError


def brute_force(t, s, p):
    lhs = sum(pi * np.outer(ti, ti) for ti, pi in zip(t, p))
    ets = sum(pi * np.outer(ti, si) for ti, si, pi in zip(t, s, p))
    ess = sum(pi * np.outer(si, si) for si, pi in zip(s, p))
    return lhs, ets @ np.linalg.inv(ess) @ ets.T


def test_three_point_example_matches_enumeration():
    t = np.array([[1.0], [2.0], [0.0]])
    s = np.array([[1.0], [-1.0], [2.0]])
    p = np.array([0.2, 0.3, 0.5])
    rep = covariance_bound(DiscreteJoint(t, s, p))
    lhs, rhs = brute_force(t, s, p)
    np.testing.assert_allclose(rep.lhs, lhs, rtol=1e-14)
    np.testing.assert_allclose(rep.rhs, rhs, rtol=1e-14)
    assert rep.min_eigenvalue >= 0


def test_t_equal_s_gives_zero_residual():
    rng = np.random.default_rng(0)
    s = rng.uniform(-2, 2, (6, 2))
    j = DiscreteJoint(s.copy(), s, np.full(6, 1 / 6))
    rep = covariance_bound(j)
    assert np.max(np.abs(rep.residual)) <= 1e-12 and rep.equality_residual <= 1e-12


def _orthogonal_noise_joint():
    # 4 outcomes; W is orthogonal to both score components under uniform weights
    s = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    w = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    M = np.array([[2.0, -3.0]])
    p = np.full(4, 0.25)
    return s, w, M, p


def test_linear_plus_orthogonal_noise():
    s, w, M, p = _orthogonal_noise_joint()
    rep = covariance_bound(DiscreteJoint(s @ M.T + w, s, p))
    np.testing.assert_allclose(rep.residual, np.array([[np.dot(p, w[:, 0] ** 2)]]), atol=1e-14)


def test_equality_condition():
    s, w, M, p = _orthogonal_noise_joint()
    assert equality_condition_holds(DiscreteJoint(s @ M.T, s, p))
    noisy = DiscreteJoint(s @ M.T + 0.1 * w, s, p)
    assert not equality_condition_holds(noisy)
    assert covariance_bound(noisy).equality_residual == pytest.approx(0.01 * np.dot(p, w[:, 0] ** 2), rel=1e-12)
    assert equality_condition_holds(DiscreteJoint(np.zeros((4, 1)), s, p))


def test_singular_score_moment():
    s = np.array([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]])
    j = DiscreteJoint(np.ones((3, 1)), s, np.full(3, 1 / 3))
    with pytest.raises(SingularityError) as exc:
        covariance_bound(j)
    assert exc.value.condition_number >= 1e12 or not np.isfinite(exc.value.condition_number)
    with pytest.raises(SingularityError):
        project_onto_scores(j, np.ones(3))


def test_symmetric_inverse():
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    inv, cond = symmetric_inverse(a)
    np.testing.assert_allclose(inv @ a, np.eye(2), atol=1e-14)
    assert cond == pytest.approx(np.linalg.cond(a), rel=1e-12)


def test_joint_validation():
    with pytest.raises(ValueError):
        DiscreteJoint(np.zeros((2, 1)), np.ones((2, 1)), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        DiscreteJoint(np.zeros((2, 1)), np.ones((2, 1)), np.array([1.0, 0.0]))


def test_projection_examples():
    rng = np.random.default_rng(1)
    j = random_joint(rng, 1, 2, 5)
    for i in range(2):
        np.testing.assert_allclose(project_onto_scores(j, j.s[:, i]), j.s[:, i], atol=1e-12)
    # build U orthogonal to both score components
    u = rng.normal(size=5)
    ps = j.s * j.probabilities[:, None]
    basis = np.linalg.qr(ps)[0]
    u_perp = u - basis @ (basis.T @ u)
    np.testing.assert_allclose(project_onto_scores(j, u_perp), 0.0, atol=1e-12)


def _joints():
    return st.builds(
        lambda seed, k, d, extra: random_joint(np.random.default_rng(seed), k, d, d + extra),
        st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(0, 5))


@settings(max_examples=200, deadline=None)
@given(_joints(), st.integers(0, 2 ** 32 - 1))
def test_projection_properties(j, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.uniform(-2, 2, (2, len(j.probabilities)))
    pu = project_onto_scores(j, u)
    pv = project_onto_scores(j, v)
    p = j.probabilities
    assert np.max(np.abs(project_onto_scores(j, pu) - pu)) <= 1e-10
    assert abs(np.dot(p, pu * v) - np.dot(p, u * pv)) <= 1e-10
    assert np.dot(p, u * u) >= np.dot(p, pu * pu) - 1e-12


@settings(max_examples=200, deadline=None)
@given(_joints())
def test_covariance_inequality_properties(j):
    rep = covariance_bound(j)
    assert rep.min_eigenvalue >= -1e-10
    assert np.max(np.abs(rep.residual - rep.residual.T)) <= 1e-12
    assert abs(rep.equality_residual - np.trace(rep.residual)) <= 1e-10
    assert rep.equality_residual >= 0


@settings(max_examples=200, deadline=None)
@given(_joints())
def test_residual_matches_direct_difference_up_to_conditioning(j):
    rep = covariance_bound(j)
    scale = max(1.0, float(np.max(np.abs(rep.lhs))))
    assert np.max(np.abs(rep.lhs - rep.rhs - rep.residual)) <= 1e-13 * rep.condition_number * scale + 1e-13
