"""Rebuild the exponential-type representation of a family with an efficient predictor.

If p is an efficient unbiased predictor of g, then along any C^1 path theta_s from
theta0 to theta,

    A(theta)' = int_0^1 theta_dot_s' I(theta_s) G(theta_s)^{-1} ds
    B(x, theta) = int_0^1 theta_dot_s' I(theta_s) G(theta_s)^{-1} g(x, theta_s) ds

and dP_theta/dP_theta0 = exp(A(theta)'p(x) - B(x, theta)). Integrals use
composite Simpson on the path nodes with a half-resolution Richardson error
estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .bounds import G_general, G_simplified, Predictand, Predictor
from .covariance import MAX_CONDITION
from .errors import QuadratureError, SingularityError
from .expectation import IntegrationSpec, expect, support_points
from .l2diff import default_spec, fisher_information
from .model import DominatedModel, _log_density_checked, as_batch, sample

DEFAULT_STEPS = 1000


@dataclass(frozen=True)
class ParameterPath:
    theta_of_s: Callable[[float], np.ndarray]
    theta_dot_of_s: Callable[[float], np.ndarray]
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if self.n_steps < 4 or self.n_steps % 4:
            raise ValueError("n_steps must be a positive multiple of 4")

    @property
    def start(self) -> np.ndarray:
        return np.asarray(self.theta_of_s(0.0), dtype=float).reshape(-1)

    @property
    def end(self) -> np.ndarray:
        return np.asarray(self.theta_of_s(1.0), dtype=float).reshape(-1)

    def nodes(self):
        s = np.linspace(0.0, 1.0, self.n_steps + 1)
        th = np.array([np.asarray(self.theta_of_s(v), dtype=float).reshape(-1) for v in s])
        td = np.array([np.asarray(self.theta_dot_of_s(v), dtype=float).reshape(-1) for v in s])
        return s, th, td


def straight_path(theta0, theta, n_steps: int = DEFAULT_STEPS) -> ParameterPath:
    a = np.asarray(theta0, dtype=float).reshape(-1)
    b = np.asarray(theta, dtype=float).reshape(-1)
    return ParameterPath(lambda s: a + s * (b - a), lambda s: b - a, n_steps)


def polyline_path(points: Sequence, n_steps: int = DEFAULT_STEPS) -> ParameterPath:
    """Piecewise-linear route through ``points``, traversed with a smoothstep on each leg.

    The smoothstep makes the velocity vanish at every corner, so the path is C^1.
    Legs get equal shares of [0, 1]; ``n_steps`` is rounded up so corners fall on
    even Simpson nodes.
    """
    pts = [np.asarray(p, dtype=float).reshape(-1) for p in points]
    legs = len(pts) - 1
    if legs < 1:
        raise ValueError("need at least two points")
    unit = 4 * legs
    n_steps = -(-n_steps // unit) * unit

    def locate(s):
        j = min(int(s * legs), legs - 1)
        return j, s * legs - j

    def theta_of_s(s):
        j, t = locate(s)
        return pts[j] + (3 * t * t - 2 * t ** 3) * (pts[j + 1] - pts[j])

    def theta_dot_of_s(s):
        j, t = locate(s)
        return legs * (6 * t - 6 * t * t) * (pts[j + 1] - pts[j])

    return ParameterPath(theta_of_s, theta_dot_of_s, n_steps)


def axis_path(theta0, theta, order: Optional[Sequence[int]] = None,
              n_steps: int = DEFAULT_STEPS) -> ParameterPath:
    """Move one coordinate at a time (an L-shaped route in two dimensions)."""
    cur = np.asarray(theta0, dtype=float).reshape(-1).copy()
    end = np.asarray(theta, dtype=float).reshape(-1)
    pts = [cur.copy()]
    for i in (order if order is not None else range(len(cur))):
        cur[i] = end[i]
        pts.append(cur.copy())
    return polyline_path(pts, n_steps)


@dataclass(frozen=True)
class ReconstructionResult:
    A_theta: np.ndarray
    A_error: float
    s: np.ndarray
    thetas: np.ndarray
    integrand_samples: np.ndarray
    g: Predictand

    @property
    def theta0(self) -> np.ndarray:
        return self.thetas[0]

    @property
    def theta(self) -> np.ndarray:
        return self.thetas[-1]

    def _phi(self, xb: np.ndarray) -> np.ndarray:
        """phi(s_j, x) for every node and observation, shape (n_nodes, N)."""
        out = np.empty((len(self.s), xb.shape[0]))
        for j, (row, th) in enumerate(zip(self.integrand_samples, self.thetas)):
            out[j] = 0.0 if not np.any(row) else self.g.value(xb, th) @ row
        return out

    def B_with_error(self, x, obs_dim: int):
        xb, single = as_batch(x, obs_dim)
        phi = self._phi(xb)
        b, err = _simpson_with_error(phi)
        return (float(b[0]), float(err[0])) if single else (b, err)


def _simpson_weights(n: int) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * n)


def _simpson_with_error(values: np.ndarray):
    """Simpson integral over [0, 1] along axis 0 and a Richardson error estimate."""
    n = values.shape[0] - 1
    full = np.tensordot(_simpson_weights(n), values, axes=(0, 0))
    half = np.tensordot(_simpson_weights(n // 2), values[::2], axes=(0, 0))
    scale = np.tensordot(_simpson_weights(n), np.abs(values), axes=(0, 0))
    err = np.abs(full - half) / 15.0 + 64 * np.finfo(float).eps * scale
    if n % 8 == 0:
        quarter = np.tensordot(_simpson_weights(n // 4), values[::4], axes=(0, 0))
        d1, d2 = np.abs(full - half), np.abs(half - quarter)
        noisy = d1 <= 1e-9 * np.maximum(scale, 1e-300)
        if np.any((d1 > d2) & ~noisy):
            raise QuadratureError("path quadrature does not converge under refinement")
    return full, err


def _G_at(model, theta, g, spec, predictor):
    if g.jacobian is None and predictor is not None:
        return G_general(model, theta, predictor, g, spec).value
    return G_simplified(model, theta, g, spec).value


def path_integrand(model: DominatedModel, s: float, path: ParameterPath, g: Predictand,
                   spec: Optional[IntegrationSpec] = None, predictor: Optional[Predictor] = None,
                   fisher_spec: Optional[IntegrationSpec] = None) -> np.ndarray:
    """theta_dot_s' I(theta_s) G(theta_s)^{-1} as a length-k row."""
    theta = model.domain.check(path.theta_of_s(s))
    theta_dot = np.asarray(path.theta_dot_of_s(s), dtype=float).reshape(-1)
    return _row(model, s, theta, theta_dot, g, spec or default_spec(model), predictor, fisher_spec)


def _row(model, s, theta, theta_dot, g, spec, predictor, fisher_spec):
    if not np.any(theta_dot):
        return np.zeros(g.k)
    fisher = fisher_information(model, theta, fisher_spec).value
    G = np.atleast_2d(_G_at(model, theta, g, spec, predictor))
    if G.shape[0] != G.shape[1]:
        raise SingularityError(f"G is {G.shape}, not square, at s={s}")
    for what, m in (("Fisher information", fisher), ("G", G)):
        cond = float(np.linalg.cond(m))
        if not cond < MAX_CONDITION:
            raise SingularityError(f"{what} singular at s={s:g} (theta={theta.tolist()}, "
                                   f"condition number {cond:.3g})", cond)
    return np.linalg.solve(G.T, fisher @ theta_dot)


def reconstruct(model: DominatedModel, path: ParameterPath, g: Predictand,
                spec: Optional[IntegrationSpec] = None, predictor: Optional[Predictor] = None,
                fisher_spec: Optional[IntegrationSpec] = None) -> ReconstructionResult:
    """Evaluate the path field once at every Simpson node and integrate it for A."""
    spec = spec or default_spec(model)
    s, thetas, dots = path.nodes()
    for th in thetas:
        model.domain.check(th)
    rows = np.array([_row(model, sv, th, td, g, spec, predictor, fisher_spec)
                     for sv, th, td in zip(s, thetas, dots)])
    a, err = _simpson_with_error(rows)
    return ReconstructionResult(a, float(np.max(err)), s, thetas, rows, g)


def reconstruct_A(model, path, g, spec=None, predictor=None, fisher_spec=None):
    """(A(theta), error estimate) with A(theta0) = 0."""
    r = reconstruct(model, path, g, spec, predictor, fisher_spec)
    return r.A_theta, r.A_error


def reconstruct_B(model, path, g, x, spec=None, predictor=None, fisher_spec=None):
    """(B(x, theta), error estimate) for one observation or a batch."""
    r = reconstruct(model, path, g, spec, predictor, fisher_spec)
    return r.B_with_error(x, model.obs_dim)


@dataclass(frozen=True)
class PathIndependenceReport:
    delta_A: float
    jacobian_condition_residual: float
    A_path_a: np.ndarray
    A_path_b: np.ndarray
    quadrature_error: float


def _jacobian_A(model, theta0, theta, g, spec, predictor, fisher_spec, n_steps, step):
    d = model.dim
    h = step * (1 + np.abs(theta))
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        up = reconstruct(model, straight_path(theta0, theta + e, n_steps), g, spec, predictor, fisher_spec)
        dn = reconstruct(model, straight_path(theta0, theta - e, n_steps), g, spec, predictor, fisher_spec)
        cols.append((up.A_theta - dn.A_theta) / (2 * h[i]))
    return np.stack(cols, axis=-1)


def path_independence_check(model: DominatedModel, path_a: ParameterPath, path_b: ParameterPath,
                            g: Predictand, spec: Optional[IntegrationSpec] = None,
                            theta_grid: Optional[Sequence] = None, predictor: Optional[Predictor] = None,
                            fisher_spec: Optional[IntegrationSpec] = None,
                            step: float = 1e-4) -> PathIndependenceReport:
    """Compare A along two paths and test whether I G^{-1} is the transposed Jacobian of A.

    The Jacobian of A is taken by central differences of straight-path
    reconstructions from the common start, at each point of ``theta_grid``
    (default: the common endpoint).
    """
    if not (np.allclose(path_a.start, path_b.start) and np.allclose(path_a.end, path_b.end)):
        raise ValueError("paths must share both endpoints")
    spec = spec or default_spec(model)
    ra = reconstruct(model, path_a, g, spec, predictor, fisher_spec)
    rb = reconstruct(model, path_b, g, spec, predictor, fisher_spec)
    delta = float(np.max(np.abs(ra.A_theta - rb.A_theta)))
    grid = [path_a.end] if theta_grid is None else [model.domain.check(t) for t in theta_grid]
    worst = 0.0
    for th in grid:
        th = model.domain.check(th)
        ja = _jacobian_A(model, path_a.start, th, g, spec, predictor, fisher_spec, path_a.n_steps, step)
        fisher = fisher_information(model, th, fisher_spec).value
        G = np.atleast_2d(_G_at(model, th, g, spec, predictor))
        field = fisher @ np.linalg.inv(G)
        worst = max(worst, float(np.max(np.abs(ja.T - field))))
    return PathIndependenceReport(delta, worst, ra.A_theta, rb.A_theta, max(ra.A_error, rb.A_error))


@dataclass(frozen=True)
class DensityRatioReport:
    normalization: float
    normalization_std_error: float
    pointwise_max_abs_log_error: float
    A_theta: np.ndarray
    n_points: int


def _test_points(model, theta0, n_points, seed):
    if model.measure == "counting":
        pts = support_points(model, theta0)
        live = _log_density_checked(model, pts, theta0) > -np.inf
        return pts[live][:n_points]
    return sample(model, theta0, n_points, seed).observations


def validate_density_ratio(model: DominatedModel, theta0, theta, path: ParameterPath, p: Predictor,
                           g: Predictand, spec: Optional[IntegrationSpec] = None,
                           x_points: Optional[np.ndarray] = None, n_points: int = 100, seed: int = 0,
                           predictor_for_G: Optional[Predictor] = None,
                           fisher_spec: Optional[IntegrationSpec] = None) -> DensityRatioReport:
    """Check dP_theta/dP_theta0 = exp(A'p - B) in mean (normalization) and pointwise (log scale).

    The normalization E_theta0 exp(A'p - B) is evaluated with a constant shift in
    the exponent so large log-ratios do not overflow.
    """
    theta0 = model.domain.check(theta0)
    theta = model.domain.check(theta)
    if not (np.allclose(path.start, theta0) and np.allclose(path.end, theta)):
        raise ValueError("path must run from theta0 to theta")
    spec = spec or default_spec(model)
    rec = reconstruct(model, path, g, spec, predictor_for_G, fisher_spec)
    a = rec.A_theta

    def log_ratio_rep(xb):
        return p.value(xb) @ a - rec.B_with_error(xb, model.obs_dim)[0]

    pts = np.asarray(x_points, dtype=float).reshape(-1, model.obs_dim) if x_points is not None \
        else _test_points(model, theta0, n_points, seed)
    rep = log_ratio_rep(pts)
    true = _log_density_checked(model, pts, theta) - _log_density_checked(model, pts, theta0)
    pointwise = float(np.max(np.abs(true - rep)))
    shift = max(0.0, float(np.max(rep)))
    with np.errstate(over="ignore", under="ignore"):
        r = expect(model, theta0, lambda xb: np.exp(log_ratio_rep(xb) - shift), spec)
        norm = float(np.exp(shift) * r.value)
        norm_se = float(np.exp(shift) * r.std_error)
    return DensityRatioReport(norm, norm_se, pointwise, a, len(pts))


def gradient_condition_check(model: DominatedModel, theta, g: Predictand, x_sample, theta0,
                             spec: Optional[IntegrationSpec] = None, n_steps: int = DEFAULT_STEPS,
                             step: float = 1e-4, predictor: Optional[Predictor] = None,
                             fisher_spec: Optional[IntegrationSpec] = None) -> float:
    """max over x of |grad_theta B(x, theta) - (J A(theta))' g(x, theta)|.

    Both derivatives are central differences of straight-path reconstructions
    from theta0.
    """
    theta = model.domain.check(theta)
    theta0 = model.domain.check(theta0)
    spec = spec or default_spec(model)
    xb, _ = as_batch(x_sample, model.obs_dim)
    d = model.dim
    h = step * (1 + np.abs(theta))
    grad_b = np.empty((xb.shape[0], d))
    ja = np.empty((g.k, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        up = reconstruct(model, straight_path(theta0, theta + e, n_steps), g, spec, predictor, fisher_spec)
        dn = reconstruct(model, straight_path(theta0, theta - e, n_steps), g, spec, predictor, fisher_spec)
        grad_b[:, i] = (up.B_with_error(xb, model.obs_dim)[0] - dn.B_with_error(xb, model.obs_dim)[0]) / (2 * h[i])
        ja[:, i] = (up.A_theta - dn.A_theta) / (2 * h[i])
    rhs = g.value(xb, theta) @ ja
    return float(np.max(np.linalg.norm(grad_b - rhs, axis=1)))
