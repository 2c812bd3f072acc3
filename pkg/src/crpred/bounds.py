"""Cramér-Rao type bounds for predictors.

A predictor ``p(X)`` targets a predictand ``g(X, theta)`` that may depend on the
observation. Its quadratic error of prediction (QEP) is E(p - g)(p - g)'. The
bound is G I^{-1} G' with I the Fisher information and G either

* ``E[(p - g) score']`` (always valid, `G_general`), or
* ``E[J_theta g]`` (valid for unbiased ``p`` under the moment conditions,
  `G_simplified`).

Equality holds iff p = g + G I^{-1} score almost surely; `efficiency_residual`
measures the distance from that identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .covariance import symmetric_inverse
from .errors import CapabilityError
from .expectation import (ExpectationResult, IntegrationSpec, box_growth, deterministic_spec, expect,
                          expect_under_shifted)
from .l2diff import default_spec, fisher_information, score_batch
from .model import DominatedModel, _log_ratio

# Unbiasedness is accepted when |E p - E g| is within max(UNBIASED_TOL, 3 se).
UNBIASED_TOL = 1e-3
# Relative growth across widened quadrature boxes that marks a moment as divergent.
DIVERGENCE_GROWTH = 1e-6


def fd_steps(theta: np.ndarray) -> np.ndarray:
    return 1e-5 * (1.0 + np.abs(theta))


@dataclass(frozen=True)
class Predictand:
    """g(x, theta) in R^k, vectorized over a batch of observations."""

    g: Callable
    k: int = 1
    jacobian: Optional[Callable] = None
    name: str = "g"

    def value(self, xb: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.asarray(self.g(xb, theta), dtype=float).reshape(xb.shape[0], self.k)

    def jac(self, xb: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """J_theta g at each observation, shape (N, k, d); central differences if not analytic."""
        d = theta.shape[0]
        if self.jacobian is not None:
            return np.asarray(self.jacobian(xb, theta), dtype=float).reshape(xb.shape[0], self.k, d)
        h = fd_steps(theta)
        out = np.empty((xb.shape[0], self.k, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h[i]
            out[:, :, i] = (self.value(xb, theta + e) - self.value(xb, theta - e)) / (2 * h[i])
        return out


@dataclass(frozen=True)
class Predictor:
    """p(x) in R^k; it never sees theta."""

    p: Callable
    k: int = 1
    name: str = "p"

    def value(self, xb: np.ndarray) -> np.ndarray:
        return np.asarray(self.p(xb), dtype=float).reshape(xb.shape[0], self.k)


@dataclass(frozen=True)
class BiasedPredictand:
    """Target r(x, theta) with bias b(theta); b=None means estimate it from the predictor."""

    r: Predictand
    b: Optional[Callable] = None
    jacobian_b: Optional[Callable] = None


@dataclass(frozen=True)
class BoundResult:
    value: np.ndarray
    G: np.ndarray
    G_std_error: np.ndarray
    fisher: np.ndarray
    bias: Optional[np.ndarray] = None
    bias_jacobian: Optional[np.ndarray] = None
    form: str = "simplified"


@dataclass(frozen=True)
class EfficiencyGap:
    gap: np.ndarray
    min_eigenvalue: float
    std_error: float

    def is_efficient(self, tol: float) -> bool:
        return abs(self.min_eigenvalue) <= tol


@dataclass(frozen=True)
class BoundReport:
    qep: np.ndarray
    qep_std_error: np.ndarray
    bound: np.ndarray
    gap: np.ndarray
    gap_min_eigenvalue: float
    gap_std_error: float
    equality_residual: float
    equality_residual_std_error: float
    G_used: np.ndarray
    I_used: np.ndarray
    form: str
    unbiased: bool
    bias: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MsepDecomposition:
    total: np.ndarray
    qep_term: np.ndarray
    incompressible: np.ndarray
    cross: np.ndarray
    total_std_error: np.ndarray
    qep_std_error: np.ndarray
    incompressible_std_error: np.ndarray
    cross_std_error: np.ndarray
    holds: bool


@dataclass(frozen=True)
class JointModel:
    """A model for (X, Y) whose first ``x_dim`` coordinates are the observed X."""

    model: DominatedModel
    x_dim: int

    def split(self, xyb: np.ndarray):
        return xyb[:, :self.x_dim], xyb[:, self.x_dim:]


@dataclass(frozen=True)
class AssumptionReport:
    theta0: np.ndarray
    grid: np.ndarray
    fisher_condition: float
    fisher_invertible: bool
    sup_p_second_moment: float
    sup_jacobian_g_second_moment: float
    sup_likelihood_ratio_second_moment: float
    items: dict = field(default_factory=dict)
    caveat: str = ("suprema are taken over a finite grid; a pass is evidence for the "
                   "moment conditions, not a proof")

    @property
    def passes(self) -> bool:
        return all(self.items.values())


def _outer(a: np.ndarray) -> np.ndarray:
    return a[:, :, None] * a[:, None, :]


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def qep(model: DominatedModel, theta, p: Predictor, g: Predictand,
        spec: Optional[IntegrationSpec] = None) -> ExpectationResult:
    """E_theta (p(X) - g(X, theta))^{x2}."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    r = expect(model, theta, lambda xb: _outer(p.value(xb) - g.value(xb, theta)), spec)
    return ExpectationResult(_sym(r.value), _sym(r.std_error), r.n_effective, r.mode_used)


def psi_jacobian(model: DominatedModel, theta, delta: Predictor,
                 spec: Optional[IntegrationSpec] = None) -> ExpectationResult:
    """Jacobian of theta -> E_theta delta(X), computed as E[delta score']."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    return expect(model, theta,
                  lambda xb: delta.value(xb)[:, :, None] * score_batch(model, xb, theta)[:, None, :], spec)


def psi_jacobian_fd(model: DominatedModel, theta, delta: Predictor,
                    spec: Optional[IntegrationSpec] = None, step: float = 1e-3) -> np.ndarray:
    """Central differences of theta -> E_theta delta, each shifted mean reweighted from theta.

    Uses only likelihood ratios, never the score, so it cross-checks `psi_jacobian`.
    """
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    d = model.dim
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        up = expect_under_shifted(model, theta, theta + e, delta.value, spec).value
        dn = expect_under_shifted(model, theta, theta - e, delta.value, spec).value
        cols.append((up - dn) / (2 * step))
    return np.stack(cols, axis=-1)


def G_general(model: DominatedModel, theta, p: Predictor, g: Predictand,
              spec: Optional[IntegrationSpec] = None) -> ExpectationResult:
    """J psi(theta) - E[g score'] = E[(p - g) score'], estimated as one expectation."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)

    def integrand(xb):
        return (p.value(xb) - g.value(xb, theta))[:, :, None] * score_batch(model, xb, theta)[:, None, :]

    return expect(model, theta, integrand, spec)


def G_simplified(model: DominatedModel, theta, g: Predictand,
                 spec: Optional[IntegrationSpec] = None) -> ExpectationResult:
    """E_theta[J_theta g(X, theta)]."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    return expect(model, theta, lambda xb: g.jac(xb, theta), spec)


def _fisher_inverse(model, theta, fisher_spec):
    fisher = fisher_information(model, theta, fisher_spec).value
    inv, _ = symmetric_inverse(fisher, f"Fisher information at theta={theta.tolist()}")
    return fisher, inv


def _quadratic(G, inv):
    return _sym(G @ inv @ G.T)


def cr_bound_unbiased(model: DominatedModel, theta, g: Predictand,
                      spec: Optional[IntegrationSpec] = None,
                      fisher_spec: Optional[IntegrationSpec] = None) -> BoundResult:
    """G I^{-1} G' with G = E J_theta g, the bound for unbiased predictors of g."""
    theta = model.domain.check(theta)
    fisher, inv = _fisher_inverse(model, theta, fisher_spec)
    G = G_simplified(model, theta, g, spec)
    return BoundResult(_quadratic(G.value, inv), G.value, G.std_error, fisher, form="simplified")


def estimate_bias(model: DominatedModel, theta, p: Predictor, r: Predictand,
                  spec: Optional[IntegrationSpec] = None):
    """b(theta) = E_theta p - E_theta r and its Jacobian by central differences.

    Shifted means are reweighted from the sample at theta, which keeps the
    difference quotient smooth under Monte Carlo.
    """
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    d = model.dim
    b = expect(model, theta, lambda xb: p.value(xb) - r.value(xb, theta), spec).value
    h = fd_steps(theta)
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        vals = []
        for t in (theta + e, theta - e):
            vals.append(expect_under_shifted(model, theta, t,
                                             lambda xb, t=t: p.value(xb) - r.value(xb, t), spec).value)
        cols.append((vals[0] - vals[1]) / (2 * h[i]))
    return np.asarray(b).reshape(-1), np.stack(cols, axis=-1).reshape(len(np.atleast_1d(b)), d)


def _bias_terms(model, theta, rb: BiasedPredictand, p, spec):
    d = model.dim
    k = rb.r.k
    if rb.b is None:
        if p is None:
            raise CapabilityError("bias not supplied and no predictor to estimate it from")
        return estimate_bias(model, theta, p, rb.r, spec)
    b = np.asarray(rb.b(theta), dtype=float).reshape(k)
    if rb.jacobian_b is not None:
        jb = np.asarray(rb.jacobian_b(theta), dtype=float).reshape(k, d)
    else:
        h = fd_steps(theta)
        jb = np.empty((k, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h[i]
            jb[:, i] = (np.asarray(rb.b(theta + e), dtype=float).reshape(k)
                        - np.asarray(rb.b(theta - e), dtype=float).reshape(k)) / (2 * h[i])
    return b, jb


def cr_bound_biased(model: DominatedModel, theta, rb: BiasedPredictand,
                    spec: Optional[IntegrationSpec] = None, predictor: Optional[Predictor] = None,
                    fisher_spec: Optional[IntegrationSpec] = None) -> BoundResult:
    """b b' + G I^{-1} G' with G = E J_theta r + J_theta b."""
    theta = model.domain.check(theta)
    fisher, inv = _fisher_inverse(model, theta, fisher_spec)
    b, jb = _bias_terms(model, theta, rb, predictor, spec)
    Gr = G_simplified(model, theta, rb.r, spec)
    G = Gr.value + jb
    value = np.outer(b, b) + _quadratic(G, inv)
    return BoundResult(value, G, Gr.std_error, fisher, bias=b, bias_jacobian=jb, form="biased")


def unbiasedness(model, theta, p: Predictor, g: Predictand, spec) -> tuple:
    """(is_unbiased, E[p - g], std_error) at theta."""
    r = expect(model, theta, lambda xb: p.value(xb) - g.value(xb, theta), spec)
    tol = max(UNBIASED_TOL, 3 * float(np.max(r.std_error)))
    return bool(np.max(np.abs(r.value)) <= tol), r.value, r.std_error


def _choose_G(model, theta, p, g, spec):
    unbiased, _, _ = unbiasedness(model, theta, p, g, spec)
    if unbiased:
        return G_simplified(model, theta, g, spec), "simplified", True
    return G_general(model, theta, p, g, spec), "general", False


def efficiency_residual(model: DominatedModel, theta, p: Predictor, g: Predictand,
                        spec: Optional[IntegrationSpec] = None,
                        fisher_spec: Optional[IntegrationSpec] = None,
                        G: Optional[np.ndarray] = None) -> ExpectationResult:
    """E|p - g - G I^{-1} score|^2; zero iff p attains the bound at theta.

    Without an explicit ``G`` the simplified form is used when ``p`` passes the
    unbiasedness check and the general form otherwise.
    """
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    _, inv = _fisher_inverse(model, theta, fisher_spec)
    if G is None:
        G = _choose_G(model, theta, p, g, spec)[0].value
    coef = G @ inv

    def integrand(xb):
        z = p.value(xb) - g.value(xb, theta) - score_batch(model, xb, theta) @ coef.T
        return np.sum(z * z, axis=1)

    return expect(model, theta, integrand, spec)


def efficiency_gap(qep_report: ExpectationResult, bound) -> EfficiencyGap:
    """QEP minus bound with its smallest eigenvalue.

    The standard error is the largest entrywise QEP standard error, a proxy for
    the uncertainty of the minimum eigenvalue.
    """
    q = np.atleast_2d(qep_report.value)
    b = np.atleast_2d(bound.value if isinstance(bound, BoundResult) else bound)
    if q.shape != b.shape:
        raise ValueError(f"QEP shape {q.shape} does not match bound shape {b.shape}")
    gap = _sym(q - b)
    se = float(np.max(qep_report.std_error)) if np.size(qep_report.std_error) else 0.0
    return EfficiencyGap(gap, float(np.linalg.eigvalsh(gap)[0]), se)


def evaluate_predictor(model: DominatedModel, theta, p: Predictor, g: Predictand,
                       spec: Optional[IntegrationSpec] = None,
                       fisher_spec: Optional[IntegrationSpec] = None) -> BoundReport:
    """QEP, bound, gap and equality residual for an unbiased-or-not predictor of g."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    fisher, inv = _fisher_inverse(model, theta, fisher_spec)
    Gr, form, unbiased = _choose_G(model, theta, p, g, spec)
    bound = _quadratic(Gr.value, inv)
    q = qep(model, theta, p, g, spec)
    gap = efficiency_gap(q, bound)
    res = efficiency_residual(model, theta, p, g, spec, fisher_spec, G=Gr.value)
    return BoundReport(q.value, q.std_error, bound, gap.gap, gap.min_eigenvalue, gap.std_error,
                       float(res.value), float(res.std_error), Gr.value, fisher, form, unbiased)


def evaluate_biased(model: DominatedModel, theta, p: Predictor, rb: BiasedPredictand,
                    spec: Optional[IntegrationSpec] = None,
                    fisher_spec: Optional[IntegrationSpec] = None) -> BoundReport:
    """QEP E(p - r)^{x2} against the biased bound, with the biased equality residual."""
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    bound = cr_bound_biased(model, theta, rb, spec, predictor=p, fisher_spec=fisher_spec)
    q = qep(model, theta, p, rb.r, spec)
    gap = efficiency_gap(q, bound)
    _, inv = _fisher_inverse(model, theta, fisher_spec)
    coef = bound.G @ inv
    b = bound.bias

    def integrand(xb):
        z = p.value(xb) - b - rb.r.value(xb, theta) - score_batch(model, xb, theta) @ coef.T
        return np.sum(z * z, axis=1)

    res = expect(model, theta, integrand, spec)
    return BoundReport(q.value, q.std_error, bound.value, gap.gap, gap.min_eigenvalue, gap.std_error,
                       float(res.value), float(res.std_error), bound.G, bound.fisher, "biased",
                       unbiased=bool(np.max(np.abs(b)) <= UNBIASED_TOL), bias=b)


def msep_decompose(joint: JointModel, theta, p: Predictor, g_xy: Callable, r: Callable,
                   spec: Optional[IntegrationSpec] = None) -> MsepDecomposition:
    """E(p - g)^{x2} = E(p - r)^{x2} + E(r - g)^{x2} when r = E_theta[g | X].

    ``g_xy(x, y, theta)`` and ``r(x, theta)`` return (N, k) arrays. The cross term
    E[(p - r)(r - g)' + (r - g)(p - r)'] is estimated per draw, so its standard
    error accounts for the correlation between the three terms; the
    decomposition holds when it is within three standard errors of zero.
    """
    model = joint.model
    theta = model.domain.check(theta)
    spec = spec or default_spec(model)
    k = p.k

    def integrand(xyb):
        x, y = joint.split(xyb)
        pv = p.value(x)
        gv = np.asarray(g_xy(x, y, theta), dtype=float).reshape(-1, k)
        rv = np.asarray(r(x, theta), dtype=float).reshape(-1, k)
        a, c = pv - rv, rv - gv
        cross = a[:, :, None] * c[:, None, :]
        return np.stack([_outer(pv - gv), _outer(a), _outer(c), cross + np.swapaxes(cross, 1, 2)], axis=1)

    res = expect(model, theta, integrand, spec)
    v, se = res.value, res.std_error
    holds = bool(np.all(np.abs(v[3]) <= np.maximum(3 * se[3], 1e-12)))
    return MsepDecomposition(v[0], v[1], v[2], v[3], se[0], se[1], se[2], se[3], holds)


def _moment_sup(model, thetas, h_factory, spec, divergent_flags):
    """Largest E_theta h over the grid; flags divergence through widened quadrature boxes."""
    sup = 0.0
    for theta, h in h_factory(thetas):
        qspec = spec if spec.mode == "quadrature" else None
        if qspec is None and model.measure == "lebesgue":
            qspec = deterministic_spec(model)
        if qspec is not None and model.measure == "lebesgue":
            vals = box_growth(model, theta, h, qspec)
            if not np.all(np.isfinite(vals)) or (vals[-1] - vals[0]) > DIVERGENCE_GROWTH * max(abs(vals[0]), 1e-300):
                divergent_flags.append(theta.tolist())
                return float("inf")
            value = vals[0]
        else:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    value = float(expect(model, theta, h, spec).value)
            except Exception:
                divergent_flags.append(theta.tolist())
                return float("inf")
            if not np.isfinite(value):
                divergent_flags.append(theta.tolist())
                return float("inf")
        sup = max(sup, value)
    return sup


def check_assumptions(model: DominatedModel, theta0, neighborhood: Sequence, p: Predictor, g: Predictand,
                      spec: Optional[IntegrationSpec] = None,
                      fisher_spec: Optional[IntegrationSpec] = None) -> AssumptionReport:
    """Grid evidence for the moment conditions behind the bounds.

    Reports the Fisher condition number at theta0 and finite-grid suprema of
    E_theta|p|^2, E_theta|J g(X, theta')|^2 and E_theta L_{theta,theta'}^2.
    A moment is declared infinite when its quadrature value keeps growing as the
    integration box widens, or when the Monte Carlo estimate is not finite.
    """
    theta0 = model.domain.check(theta0)
    grid = np.array([model.domain.check(t) for t in neighborhood])
    if len(grid) == 0:
        raise ValueError("neighborhood grid is empty")
    spec = spec or default_spec(model)
    fisher = fisher_information(model, theta0, fisher_spec).value
    cond = float(np.linalg.cond(fisher)) if np.all(np.isfinite(fisher)) else float("inf")
    flags: dict = {"p": [], "jg": [], "lr": []}

    def p_moments(thetas):
        for t in thetas:
            yield t, lambda xb: np.sum(p.value(xb) ** 2, axis=1)

    def jg_moments(thetas):
        for t in thetas:
            for t2 in thetas:
                yield t, lambda xb, t2=t2: np.sum(g.jac(xb, t2) ** 2, axis=(1, 2))

    def lr_moments(thetas):
        for t in thetas:
            for t2 in thetas:
                def h(xb, t=t, t2=t2):
                    with np.errstate(over="ignore", under="ignore"):
                        return np.exp(2 * _log_ratio(model, t, t2, xb))
                yield t, h

    sp = _moment_sup(model, grid, p_moments, spec, flags["p"])
    sj = _moment_sup(model, grid, jg_moments, spec, flags["jg"])
    sl = _moment_sup(model, grid, lr_moments, spec, flags["lr"])
    items = {
        "fisher_invertible": bool(cond < 1e12),
        "sup_jacobian_g_finite": bool(np.isfinite(sj)),
        "sup_likelihood_ratio_finite": bool(np.isfinite(sl)),
        "sup_p_second_moment_finite": bool(np.isfinite(sp)),
    }
    return AssumptionReport(theta0, grid, cond, items["fisher_invertible"], sp, sj, sl, items)
