"""Scores, Fisher information and numerical L2-differentiability diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AbsoluteContinuityError, SupportError
from .expectation import QUADRATURE, ExpectationResult, IntegrationSpec, deterministic_spec, expect
from .model import DominatedModel, _log_density_checked, _log_ratio, as_batch, numeric_score

log = logging.getLogger(__name__)

# Draws used for the in-probability condition of check_lemma_106 on Lebesgue models.
COND1_DRAWS = 200_000


@dataclass(frozen=True)
class FisherMatrix:
    value: np.ndarray
    std_error: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.value)[0])

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.value))


@dataclass(frozen=True)
class HellingerDiagnostic:
    u_norms: np.ndarray
    remainders: np.ndarray
    std_errors: np.ndarray
    fitted_exponent: float
    passes: bool
    dropped: tuple = ()


@dataclass(frozen=True)
class DifferentiabilityConditionsReport:
    u_norms: np.ndarray
    cond1_probabilities: dict
    cond2_residuals: np.ndarray
    cond1_pass: bool
    cond2_pass: bool


@dataclass(frozen=True)
class ContinuityReport:
    thetas: np.ndarray
    residuals: np.ndarray
    std_errors: np.ndarray
    weighting: str
    tol: float
    passes: bool


def default_spec(model: DominatedModel, n: int = 100_000, seed: int = 0) -> IntegrationSpec:
    return deterministic_spec(model) or IntegrationSpec.monte_carlo(n, seed)


def score_batch(model: DominatedModel, xb: np.ndarray, theta: np.ndarray, step=None) -> np.ndarray:
    """Scores at a batch of observations, shape (N, d). Analytic when the model provides one."""
    if step is None:
        s = model.analytic_score(xb, theta)
        if s is not None:
            return np.asarray(s, dtype=float).reshape(xb.shape[0], model.dim)
    return numeric_score(model, xb, theta, step)


def score(model: DominatedModel, theta, x, step: Optional[float] = None) -> np.ndarray:
    """Score vector at x; pass ``step`` to force central differences with that step."""
    theta = model.domain.check(theta)
    xb, single = as_batch(x, model.obs_dim)
    if np.any(_log_density_checked(model, xb, theta) == -np.inf):
        raise SupportError(f"{model.name}: zero density at x, theta={theta.tolist()}")
    s = score_batch(model, xb, theta, step)
    return s[0] if single else s


def _symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def fisher_information(model: DominatedModel, theta, spec: Optional[IntegrationSpec] = None) -> FisherMatrix:
    """I(theta) = E_theta[score score'], symmetrized.

    In deterministic modes an iid product of n copies uses I = n * I_marginal, so
    models with many coordinates still get quadrature accuracy.
    """
    theta = model.domain.check(theta)
    if spec is None:
        spec = deterministic_spec(model) or deterministic_spec(model.marginal()) or default_spec(model)
    if spec.deterministic and model.replicates > 1:
        inner = fisher_information(model.marginal(), theta, spec)
        return FisherMatrix(model.replicates * inner.value, model.replicates * inner.std_error)

    def outer(xb):
        s = score_batch(model, xb, theta)
        return s[:, :, None] * s[:, None, :]

    r = expect(model, theta, outer, spec)
    return FisherMatrix(_symmetrize(r.value), _symmetrize(r.std_error))


def score_mean(model: DominatedModel, theta, spec: Optional[IntegrationSpec] = None) -> ExpectationResult:
    """E_theta[score]; zero for every L2-differentiable family."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    return expect(model, theta, lambda xb: score_batch(model, xb, theta), spec)


def _check_support_mass(model, theta0, theta, spec):
    """Raise unless E_theta0[L_{theta0,theta}] = 1, i.e. P_theta has no mass off supp P_theta0."""
    def ratio(xb):
        with np.errstate(under="ignore", over="ignore"):
            return np.exp(_log_ratio(model, theta0, theta, xb))
    r = expect(model, theta0, ratio, spec)
    mass = float(r.value)
    if mass < 1.0 - max(1e-6, 5 * float(r.std_error)):
        raise AbsoluteContinuityError(
            f"{model.name}: P_theta with theta={theta.tolist()} puts mass {1 - mass:.3g} "
            f"outside the support of P_theta0, theta0={theta0.tolist()}")


def _as_u(model, u):
    return np.broadcast_to(np.asarray(u, dtype=float), (model.dim,)).copy()


def _remainder(model, theta0, u, spec) -> ExpectationResult:
    u = _as_u(model, u)
    if not np.any(u):
        return ExpectationResult(np.asarray(0.0), np.asarray(0.0), 0, spec.mode)
    theta = model.domain.check(theta0 + u)
    _check_support_mass(model, theta0, theta, spec)

    def integrand(xb):
        lr = _log_ratio(model, theta0, theta, xb)
        if np.any(lr == np.inf):
            raise AbsoluteContinuityError(f"{model.name}: infinite likelihood ratio at theta={theta.tolist()}")
        r = np.expm1(0.5 * lr) - 0.5 * score_batch(model, xb, theta0) @ u
        return r * r

    return expect(model, theta0, integrand, spec)


def hellinger_remainder(model: DominatedModel, theta0, u, spec: Optional[IntegrationSpec] = None) -> float:
    """E_theta0 (L^{1/2}_{theta0}(u) - 1 - u'score/2)^2."""
    theta0 = model.domain.check(theta0)
    return float(_remainder(model, theta0, u, spec or default_spec(model)).value)


def _u_vectors(model, u_sequence):
    us = [_as_u(model, u) for u in u_sequence]
    norms = np.array([np.linalg.norm(u) for u in us])
    return us, norms


def check_l2_diff(model: DominatedModel, theta0, u_sequence: Sequence,
                  spec: Optional[IntegrationSpec] = None) -> HellingerDiagnostic:
    """Fit the log-log slope of the Hellinger remainder against |u|; pass iff slope > 1.

    Remainders smaller than ten standard errors (Monte Carlo) or nonpositive are
    treated as noise and excluded from the fit.
    """
    theta0 = model.domain.check(theta0)
    spec = spec or default_spec(model)
    us, norms = _u_vectors(model, u_sequence)
    if len(us) < 5:
        raise ValueError("need at least 5 steps")
    if np.any(norms <= 0) or np.any(np.diff(norms) >= 0):
        raise ValueError("step norms must be positive and strictly decreasing")
    res = [_remainder(model, theta0, u, spec) for u in us]
    rem = np.array([float(r.value) for r in res])
    se = np.array([float(r.std_error) for r in res])
    keep = (rem > 0) & (rem > 10 * se)
    dropped = tuple(int(i) for i in np.flatnonzero(~keep))
    if dropped:
        log.warning("check_l2_diff: dropping %d remainder(s) at the noise floor: %s", len(dropped), dropped)
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(norms[keep]), np.log(rem[keep]), 1)[0])
    else:
        slope = float("nan")
    return HellingerDiagnostic(norms, rem, se, slope, bool(slope > 1.0), dropped)


def _nonincreasing(values, slack) -> bool:
    return bool(np.all(np.diff(values) <= slack))


def _decreasing_to_zero(values, slack) -> bool:
    values = np.asarray(values, dtype=float)
    if np.all(np.abs(values) <= slack):
        return True
    return _nonincreasing(values, slack) and values[-1] < values[0]


def check_lemma_106(model: DominatedModel, theta0, u_sequence: Sequence,
                    spec: Optional[IntegrationSpec] = None, epsilons=(0.1, 0.01),
                    cond1_draws: int = COND1_DRAWS) -> DifferentiabilityConditionsReport:
    """Check the two equivalent conditions for L2-differentiability along a step sequence.

    cond1: P(|L(u) - 1 - u'score| / |u| > eps) must shrink to zero for each eps.
    cond2: |E(L^{1/2}(u) - 1)^2 - u'I u / 4| / |u|^2 must shrink to zero.

    Indicator integrands are poorly served by quadrature, so cond1 on Lebesgue
    models uses ``cond1_draws`` common-random-number draws when ``spec`` is a
    quadrature spec.
    """
    theta0 = model.domain.check(theta0)
    spec = spec or default_spec(model)
    us, norms = _u_vectors(model, u_sequence)
    live = [i for i, nrm in enumerate(norms) if nrm > 0]
    if not live:
        zeros = np.zeros(len(us))
        return DifferentiabilityConditionsReport(norms, {e: zeros.copy() for e in epsilons}, zeros, True, True)
    us = [us[i] for i in live]
    norms = norms[live]
    fisher = fisher_information(model, theta0, spec).value
    cspec = spec if spec.mode != QUADRATURE else IntegrationSpec.monte_carlo(cond1_draws, spec.seed)

    probs, prob_se = {}, {}
    for eps in epsilons:
        vals, ses = [], []
        for u in us:
            theta = model.domain.check(theta0 + u)
            nrm = np.linalg.norm(u)

            def indicator(xb, theta=theta, u=u, nrm=nrm):
                with np.errstate(over="ignore", under="ignore"):
                    lr = np.exp(_log_ratio(model, theta0, theta, xb))
                dev = np.abs(lr - 1.0 - score_batch(model, xb, theta0) @ u) / nrm
                return (dev > eps).astype(float)

            r = expect(model, theta0, indicator, cspec)
            vals.append(float(r.value))
            ses.append(float(r.std_error))
        probs[eps] = np.array(vals)
        prob_se[eps] = np.array(ses)

    cond2, cond2_se = [], []
    for u in us:
        theta = model.domain.check(theta0 + u)
        _check_support_mass(model, theta0, theta, spec)

        def hell(xb, theta=theta):
            r = np.expm1(0.5 * _log_ratio(model, theta0, theta, xb))
            return r * r

        r = expect(model, theta0, hell, spec)
        nrm2 = float(u @ u)
        cond2.append(abs(float(r.value) - 0.25 * float(u @ fisher @ u)) / nrm2)
        cond2_se.append(float(r.std_error) / nrm2)
    cond2 = np.array(cond2)

    def slack(se):
        return max(1e-12, 3 * float(np.max(se))) if len(se) else 1e-12

    cond1_pass = all(_decreasing_to_zero(probs[e], slack(prob_se[e])) for e in epsilons)
    cond2_pass = _decreasing_to_zero(cond2, slack(np.array(cond2_se)))
    return DifferentiabilityConditionsReport(norms, probs, cond2, cond1_pass, cond2_pass)


def check_continuous_l2(model: DominatedModel, theta0, theta_sequence: Sequence,
                        spec: Optional[IntegrationSpec] = None, tol: float = 1e-3,
                        weighting: str = "dominating") -> ContinuityReport:
    """Residuals of the continuous-L2-differentiability limit along ``theta_sequence``.

    ``weighting="dominating"`` computes the integral of |sqrt(f_theta) score_theta -
    sqrt(f_theta0) score_theta0|^2 against the dominating measure, written as an
    E_theta0 expectation with the square root of f_theta/f_theta0.
    ``weighting="reference"`` uses the literal ratio L_{theta,theta0} = f_theta0/f_theta
    inside E_theta0 instead.
    """
    if weighting not in ("dominating", "reference"):
        raise ValueError("weighting must be 'dominating' or 'reference'")
    theta0 = model.domain.check(theta0)
    spec = spec or default_spec(model)
    thetas = np.array([model.domain.check(t) for t in theta_sequence])
    sign = 1.0 if weighting == "dominating" else -1.0
    res, ses = [], []
    for theta in thetas:
        if np.array_equal(theta, theta0):
            res.append(0.0)
            ses.append(0.0)
            continue
        _check_support_mass(model, theta0, theta, spec)

        def integrand(xb, theta=theta):
            lr = _log_ratio(model, theta0, theta, xb)
            if np.any(lr == np.inf):
                raise AbsoluteContinuityError(f"{model.name}: infinite likelihood ratio")
            with np.errstate(under="ignore", over="ignore"):
                w = np.exp(0.5 * sign * lr)
            diff = w[:, None] * score_batch(model, xb, theta) - score_batch(model, xb, theta0)
            return np.sum(diff * diff, axis=1)

        r = expect(model, theta0, integrand, spec)
        res.append(float(r.value))
        ses.append(float(r.std_error))
    res, ses = np.array(res), np.array(ses)
    slack = max(1e-12, 3 * float(ses.max())) if len(ses) else 1e-12
    passes = bool(len(res) > 0 and _nonincreasing(res, slack) and res[-1] < tol)
    return ContinuityReport(thetas, res, ses, weighting, tol, passes)
