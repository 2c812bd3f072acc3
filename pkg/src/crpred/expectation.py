"""Expectations E_theta[h(X)] by exact enumeration, tensor Gauss-Legendre quadrature or Monte Carlo.

Integrands take a batch of observations ``(N, m)`` and return an array whose
leading axis is ``N``; the trailing shape (scalar, vector or matrix) is
preserved in the result.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import AbsoluteContinuityError, CapabilityError, CoverageError, IntegrandError
from .model import SAMPLE_CHUNK, DominatedModel, _log_density_checked, _log_ratio, substream

EXACT = "exact_discrete"
QUADRATURE = "quadrature"
MONTE_CARLO = "monte_carlo"

MAX_QUADRATURE_DIM = 4
MAX_ENUMERATION = 2_000_000
# Mass a quadrature box or truncated support may leave out before CoverageError.
COVERAGE_TOL = 1e-10
# Discrete tail cut; well below the 1e-12 mass requirement so exact-mode sums
# such as E[score] vanish to rounding.
DISCRETE_TAIL = 1e-16

Integrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntegrationSpec:
    mode: str
    n: int = 0
    seed: int = 0
    nodes: int = 320
    order: int = 16
    width: float = 10.0
    target_rel_tol: float = 1e-6
    workers: int = 1

    def __post_init__(self):
        if self.mode not in (EXACT, QUADRATURE, MONTE_CARLO):
            raise ValueError(f"unknown integration mode {self.mode!r}")
        if self.mode == QUADRATURE and self.nodes < 15:
            raise ValueError("quadrature needs at least 15 nodes per axis")
        if self.mode == MONTE_CARLO and self.n < 100:
            raise ValueError("Monte Carlo needs at least 100 draws")
        if self.target_rel_tol <= 0:
            raise ValueError("target_rel_tol must be positive")

    @classmethod
    def exact(cls) -> "IntegrationSpec":
        return cls(EXACT)

    @classmethod
    def quadrature(cls, nodes: int = 320, width: float = 10.0, order: int = 16) -> "IntegrationSpec":
        return cls(QUADRATURE, nodes=nodes, width=width, order=order)

    @classmethod
    def monte_carlo(cls, n: int, seed: int, workers: int = 1) -> "IntegrationSpec":
        return cls(MONTE_CARLO, n=n, seed=seed, workers=workers)

    @property
    def deterministic(self) -> bool:
        return self.mode != MONTE_CARLO


@dataclass(frozen=True)
class ExpectationResult:
    value: np.ndarray
    std_error: np.ndarray
    n_effective: int
    mode_used: str


def deterministic_spec(model: DominatedModel, nodes: int = 320) -> Optional[IntegrationSpec]:
    """The exact or quadrature spec that suits ``model``, or None if neither applies."""
    if model.measure == "counting":
        return IntegrationSpec.exact()
    if model.obs_dim <= MAX_QUADRATURE_DIM:
        return IntegrationSpec.quadrature(nodes=nodes)
    return None


# --- node sets -----------------------------------------------------------------

@lru_cache(maxsize=64)
def _gl_unit(nodes: int, order: int):
    panels = max(1, -(-nodes // order))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def quadrature_nodes(model: DominatedModel, theta: np.ndarray, spec: IntegrationSpec):
    """Tensor-product composite Gauss-Legendre nodes and weights on the model's box."""
    m = model.obs_dim
    if model.measure != "lebesgue":
        raise CapabilityError(f"quadrature requested for counting model {model.name}")
    if m > MAX_QUADRATURE_DIM:
        raise CapabilityError(f"quadrature limited to {MAX_QUADRATURE_DIM} dimensions, "
                              f"{model.name} has {m}")
    lo, hi = model.quadrature_box(theta, spec.width)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (m,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (m,))
    u, wu = _gl_unit(spec.nodes, spec.order)
    axes = [lo[i] + (hi[i] - lo[i]) * u for i in range(m)]
    waxes = [(hi[i] - lo[i]) * wu for i in range(m)]
    if m == 1:
        return axes[0][:, None], waxes[0]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    wgrid = np.prod(np.stack(np.meshgrid(*waxes, indexing="ij"), axis=-1).reshape(-1, m), axis=1)
    return grid, wgrid


def support_points(model: DominatedModel, theta: np.ndarray) -> np.ndarray:
    pts = np.asarray(model.enumerate_support(theta, DISCRETE_TAIL), dtype=float)
    if pts.shape[0] > MAX_ENUMERATION:
        raise CapabilityError(f"{model.name}: support of size {pts.shape[0]} too large to enumerate")
    return pts.reshape(-1, model.obs_dim)


def product_support(per_axis: list) -> np.ndarray:
    """Cartesian product of per-coordinate supports, shape (M, len(per_axis))."""
    return np.array(list(itertools.product(*per_axis)), dtype=float).reshape(-1, len(per_axis))


def weighted_points(model: DominatedModel, theta: np.ndarray, spec: IntegrationSpec):
    """Points and probability weights for a deterministic spec, coverage checked."""
    if spec.mode == EXACT:
        pts = support_points(model, theta)
        with np.errstate(under="ignore"):
            w = np.exp(_log_density_checked(model, pts, theta))
    elif spec.mode == QUADRATURE:
        pts, qw = quadrature_nodes(model, theta, spec)
        with np.errstate(under="ignore"):
            w = qw * np.exp(_log_density_checked(model, pts, theta))
    else:
        raise ValueError("weighted_points needs a deterministic spec")
    mass = float(np.sum(w))
    if abs(mass - 1.0) > COVERAGE_TOL:
        raise CoverageError(f"{model.name} at theta={theta.tolist()}: {spec.mode} captured mass "
                            f"{mass!r}, off by {abs(mass - 1):.3g}")
    return pts, w


# --- evaluation ----------------------------------------------------------------

def _evaluate(h: Integrand, pts: np.ndarray, workers: int = 1) -> np.ndarray:
    if workers <= 1 or len(pts) <= SAMPLE_CHUNK:
        vals = np.asarray(h(pts), dtype=float)
    else:
        parts = [pts[i:i + SAMPLE_CHUNK] for i in range(0, len(pts), SAMPLE_CHUNK)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = np.concatenate([np.asarray(v, dtype=float) for v in pool.map(h, parts)], axis=0)
    if vals.shape[0] != len(pts):
        raise ValueError(f"integrand returned leading dimension {vals.shape[0]} for {len(pts)} points")
    return vals


def _weighted_sum(vals: np.ndarray, w: np.ndarray, what: str) -> np.ndarray:
    pos = w > 0
    bad = ~np.isfinite(vals[pos])
    if np.any(bad):
        raise IntegrandError(f"non-finite integrand values on a positive-mass set ({what})")
    return np.tensordot(w[pos], vals[pos], axes=(0, 0))


def mc_draws(model: DominatedModel, theta: np.ndarray, spec: IntegrationSpec) -> np.ndarray:
    """The observations a Monte Carlo spec uses at ``theta``; counter-based, worker independent."""
    n = spec.n
    sizes = [min(SAMPLE_CHUNK, n - c) for c in range(0, n, SAMPLE_CHUNK)]

    def one(c):
        return np.asarray(model.draw(substream(spec.seed, c), theta, sizes[c]),
                          dtype=float).reshape(sizes[c], model.obs_dim)

    if spec.workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(one, range(len(sizes))))
    else:
        chunks = [one(c) for c in range(len(sizes))]
    return np.concatenate(chunks, axis=0)


def _mc_result(vals: np.ndarray) -> ExpectationResult:
    if not np.all(np.isfinite(vals)):
        raise IntegrandError("non-finite integrand values in Monte Carlo sample")
    n = vals.shape[0]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(n)
    return ExpectationResult(np.asarray(mean), np.asarray(se), n, MONTE_CARLO)


def expect(model: DominatedModel, theta, h: Integrand, spec: IntegrationSpec) -> ExpectationResult:
    """E_theta[h(X)] with an entrywise standard error (zero in deterministic modes)."""
    theta = model.domain.check(theta)
    if spec.mode == MONTE_CARLO:
        return _mc_result(_evaluate(h, mc_draws(model, theta, spec), spec.workers))
    pts, w = weighted_points(model, theta, spec)
    vals = _evaluate(h, pts, spec.workers)
    value = _weighted_sum(vals, w, f"theta={theta.tolist()}")
    return ExpectationResult(np.asarray(value), np.zeros_like(np.asarray(value)), len(pts), spec.mode)


def expect_under_shifted(model: DominatedModel, theta0, theta, h: Integrand,
                         spec: IntegrationSpec) -> ExpectationResult:
    """E_theta[h(X)] computed as E_theta0[L_{theta0,theta}(X) h(X)]."""
    theta0 = model.domain.check(theta0)
    theta = model.domain.check(theta)

    def weighted(xb):
        vals = np.asarray(h(xb), dtype=float)
        return _ratio(model, theta0, theta, xb).reshape((-1,) + (1,) * (vals.ndim - 1)) * vals

    # E_theta0 L < 1 means P_theta has mass where f_theta0 vanishes; under Monte
    # Carlo that mass is invisible pointwise, so the check is statistical
    m = expect(model, theta0, lambda xb: _ratio(model, theta0, theta, xb), spec)
    mass, se = float(m.value), float(m.std_error)
    if mass < 1.0 - max(1e-6, 5 * se):
        raise AbsoluteContinuityError(
            f"P_theta puts mass {1 - mass:.3g} outside the support of P_theta0 "
            f"(theta0={theta0.tolist()}, theta={theta.tolist()})")
    return expect(model, theta0, weighted, spec)


def _ratio(model, theta0, theta, xb):
    lr = _log_ratio(model, theta0, theta, xb)
    if np.any(lr == np.inf):
        raise AbsoluteContinuityError(
            f"likelihood ratio infinite for theta0={theta0.tolist()}, theta={theta.tolist()}")
    with np.errstate(under="ignore", over="ignore"):
        return np.exp(lr)


def box_growth(model: DominatedModel, theta, h: Integrand, spec: IntegrationSpec,
               factors=(1.0, 2.0, 4.0)) -> list:
    """Quadrature values of E_theta h on boxes widened by ``factors``.

    A convergent integral is stable across the widenings; steady growth signals a
    divergent moment. Coverage is not enforced since wide boxes are the point.
    """
    theta = model.domain.check(theta)
    values = []
    for f in factors:
        s = IntegrationSpec.quadrature(nodes=int(spec.nodes * f), width=spec.width * f, order=spec.order)
        pts, qw = quadrature_nodes(model, theta, s)
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            w = qw * np.exp(_log_density_checked(model, pts, theta))
            vals = np.asarray(h(pts), dtype=float)
            pos = w > 0
            values.append(float(np.sum(w[pos] * vals[pos])))
    return values
