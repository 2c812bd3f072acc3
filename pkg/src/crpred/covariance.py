"""Covariance matrix inequality and the score-space projection, on finite joint laws.

These are exact (enumeration) computations and serve as the oracle layer for
the prediction bounds: with S the score and T = p - g, the bound is the
right-hand side E(TS') (E SS')^{-1} E(ST').
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularityError

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint law of (T, S) on finitely many outcomes. ``t`` is (M, k), ``s`` is (M, d)."""

    t: np.ndarray
    s: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).reshape(-1)
        t = np.asarray(self.t, dtype=float).reshape(len(p), -1)
        s = np.asarray(self.s, dtype=float).reshape(len(p), -1)
        if np.any(p <= 0):
            raise ValueError("probabilities must be positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    @property
    def k(self) -> int:
        return self.t.shape[1]

    @property
    def d(self) -> int:
        return self.s.shape[1]

    def moment(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """E[a b'] for outcome-indexed arrays a (M, i) and b (M, j)."""
        return np.einsum("m,mi,mj->ij", self.probabilities, a, b)


@dataclass(frozen=True)
class CovarianceReport:
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    min_eigenvalue: float
    equality_residual: float
    condition_number: float


def symmetric_inverse(m: np.ndarray, what: str = "matrix", max_condition: float = MAX_CONDITION):
    """Inverse of a symmetric positive definite matrix by eigendecomposition.

    Returns ``(inverse, condition_number)``; raises `SingularityError` instead of
    regularizing when the condition number reaches ``max_condition``.
    """
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    cond = float("inf") if w[0] <= 0 else top / float(w[0])
    if not cond < max_condition:
        raise SingularityError(f"{what} is singular or ill-conditioned (condition number {cond:.3g})", cond)
    return (v / w) @ v.T, cond


def _coefficients(joint: DiscreteJoint):
    """E(TS')(E SS')^{-1} by weighted least squares, plus the condition number of E SS'.

    Solving min E|T - C S|^2 directly avoids forming the inverse, so Z = T - C S
    stays accurate when E SS' is poorly conditioned.
    """
    _, cond = symmetric_inverse(joint.moment(joint.s, joint.s), "E S S'")
    root = np.sqrt(joint.probabilities)[:, None]
    sol = np.linalg.lstsq(root * joint.s, root * joint.t, rcond=None)[0]
    return sol.T, cond


def covariance_bound(joint: DiscreteJoint) -> CovarianceReport:
    """Both sides of E TT' >= E(TS')(E SS')^{-1}E(ST') and the residual.

    The residual lhs - rhs is computed as E ZZ' with Z = T - E(TS')(E SS')^{-1}S,
    the same matrix without the cancellation of subtracting two large terms.
    """
    coef, cond = _coefficients(joint)
    lhs = joint.moment(joint.t, joint.t)
    ets = joint.moment(joint.t, joint.s)
    rhs = coef @ ets.T
    rhs = 0.5 * (rhs + rhs.T)
    z = joint.t - joint.s @ coef.T
    residual = joint.moment(z, z)
    residual = 0.5 * (residual + residual.T)
    eq = float(np.dot(joint.probabilities, np.sum(z * z, axis=1)))
    return CovarianceReport(lhs, rhs, residual, float(np.linalg.eigvalsh(residual)[0]), eq, cond)


def project_onto_scores(joint: DiscreteJoint, u) -> np.ndarray:
    """Outcome-indexed values of P_S(U) = E(U S')(E SS')^{-1} S."""
    u = np.asarray(u, dtype=float).reshape(-1, 1)
    coef, _ = _coefficients(DiscreteJoint(u, joint.s, joint.probabilities))
    return (joint.s @ coef.T).reshape(-1)


def equality_condition_holds(joint: DiscreteJoint, tol: float = 1e-12) -> bool:
    """Whether T = E(TS')(E SS')^{-1} S almost surely, judged by E|Z|^2 <= tol."""
    return covariance_bound(joint).equality_residual <= tol


def random_joint(rng: np.random.Generator, k: int, d: int, m: int,
                 max_condition: float = MAX_CONDITION) -> DiscreteJoint:
    """Random joint with support in [-2, 2], flat-Dirichlet weights, E SS' well conditioned."""
    if m < d:
        raise ValueError("need at least d support points for an invertible E SS'")
    while True:
        t = rng.uniform(-2, 2, (m, k))
        s = rng.uniform(-2, 2, (m, d))
        p = rng.dirichlet(np.ones(m))
        if np.any(p <= 0):
            continue
        p = p / p.sum()
        ess = np.einsum("m,mi,mj->ij", p, s, s)
        if np.linalg.cond(ess) < max_condition:
            return DiscreteJoint(t, s, p)
