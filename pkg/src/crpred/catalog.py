"""Built-in models with predictands, predictors and closed-form oracles.

Entries are addressable by string identifiers such as
``"gaussian_location:n=10,sigma=1"`` (see `get_entry`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.special import logit

from .bounds import BiasedPredictand, JointModel, Predictand, Predictor
from .errors import ConfigError, NormalizationError
from .expectation import IntegrationSpec, deterministic_spec, expect
from .families import Bernoulli, GaussianLocation, GaussianMean, Poisson, StationaryAR1, UniformScale
from .l2diff import fisher_information
from .model import DominatedModel, ParameterDomain


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    model: DominatedModel
    predictands: dict
    predictors: dict
    closed_forms: dict
    biased: dict = field(default_factory=dict)
    joint: Optional[JointModel] = None
    warnings: tuple = ()


def _const_theta(k: int = 1) -> Predictand:
    return Predictand(lambda x, t: np.broadcast_to(t, (x.shape[0], k)), k,
                      lambda x, t: np.broadcast_to(np.eye(k), (x.shape[0], k, k)), "theta")


def _mean(x):
    return x.mean(axis=1, keepdims=True)


def gaussian_location(n: int = 10, sigma: float = 1.0) -> CatalogEntry:
    """n iid N(theta, sigma^2).

    Score sum(x_i - theta)/sigma^2, Fisher n/sigma^2; the sample mean is unbiased
    for theta with QEP sigma^2/n, which equals the bound G I^{-1} G' = sigma^2/n
    (G = 1). With p = mean and theta0 = 0 the density ratio is
    exp(A p - B) with A = n theta/sigma^2 and B = n theta^2/(2 sigma^2).
    """
    model = GaussianLocation(n, sigma)
    s2 = sigma * sigma
    predictands = {
        "theta": _const_theta(),
        # same function as "theta": E[X_{n+1} | X] for an independent future draw
        "future_observation": Predictand(lambda x, t: np.full((x.shape[0], 1), t[0]), 1,
                                         lambda x, t: np.ones((x.shape[0], 1, 1)), "future_observation"),
        "theta_x": Predictand(lambda x, t: t[0] * x[:, :1], 1,
                              lambda x, t: x[:, :1, None], "theta_x"),
    }
    predictors = {
        "mean": Predictor(_mean, 1, "mean"),
        "median": Predictor(lambda x: np.median(x, axis=1, keepdims=True), 1, "median"),
        "shrunk_mean": Predictor(lambda x: 0.9 * _mean(x), 1, "shrunk_mean"),
        "mean_offset": Predictor(lambda x: _mean(x) + 0.5, 1, "mean_offset"),
        "first": Predictor(lambda x: x[:, :1], 1, "first"),
        "x_sq_minus_var": Predictor(lambda x: x[:, :1] ** 2 - s2, 1, "x_sq_minus_var"),
        "exp_x_sq_quarter": Predictor(lambda x: np.exp(x[:, :1] ** 2 / 4), 1, "exp_x_sq_quarter"),
    }
    biased = {
        "shrunk_mean": BiasedPredictand(predictands["theta"], lambda t: -0.1 * t,
                                        lambda t: np.array([[-0.1]])),
    }
    closed = {
        "fisher": lambda t: np.array([[n / s2]]),
        "score": lambda x, t: np.sum(np.atleast_2d(x) - t[0], axis=1) / s2,
        "qep_mean": s2 / n,
        "bound_theta": s2 / n,
        "qep_shrunk_mean": lambda t: 0.81 * s2 / n + 0.01 * t[0] ** 2,
        "bound_biased_shrunk_mean": lambda t: 0.01 * t[0] ** 2 + 0.81 * s2 / n,
        "A_mean": lambda t, t0=np.zeros(1): n * (t - t0) / s2,
        "B_theta": lambda t, t0=np.zeros(1): n * (t[0] ** 2 - t0[0] ** 2) / (2 * s2),
    }
    return CatalogEntry(model.name, model, predictands, predictors, closed, biased)


def gaussian_mean(dim: int = 2) -> CatalogEntry:
    """One draw from N(theta, I_dim); A(theta) = theta - theta0, B = (|theta|^2 - |theta0|^2)/2."""
    model = GaussianMean(dim)
    closed = {
        "fisher": lambda t: np.eye(dim),
        "A_x": lambda t, t0: np.asarray(t) - np.asarray(t0),
        "B_theta": lambda t, t0: 0.5 * (np.dot(t, t) - np.dot(t0, t0)),
    }
    return CatalogEntry(model.name, model, {"theta": _const_theta(dim)},
                        {"x": Predictor(lambda x: x, dim, "x")}, closed)


def bernoulli(n: int = 1) -> CatalogEntry:
    """n iid Bernoulli(theta); I = n/(theta(1-theta)), natural parameter logit(theta)."""
    model = Bernoulli(n)
    closed = {
        "fisher": lambda t: np.array([[n / (t[0] * (1 - t[0]))]]),
        "score": lambda x, t: np.sum(np.atleast_2d(x) / t[0] - (1 - np.atleast_2d(x)) / (1 - t[0]), axis=1),
        "A_mean": lambda t, t0: n * (logit(t[0]) - logit(t0[0])),
        "B_theta": lambda t, t0: -n * (np.log1p(-t[0]) - np.log1p(-t0[0])),
        "bound_theta": lambda t: t[0] * (1 - t[0]) / n,
    }
    return CatalogEntry(model.name, model, {"theta": _const_theta()},
                        {"mean": Predictor(_mean, 1, "mean"), "first": Predictor(lambda x: x[:, :1], 1, "first")},
                        closed)


def poisson(n: int = 1) -> CatalogEntry:
    """n iid Poisson(theta); I = n/theta, natural parameter log(theta)."""
    model = Poisson(n)
    closed = {
        "fisher": lambda t: np.array([[n / t[0]]]),
        "score": lambda x, t: np.sum(np.atleast_2d(x) / t[0] - 1, axis=1),
        "A_mean": lambda t, t0: n * (np.log(t[0]) - np.log(t0[0])),
        "B_theta": lambda t, t0: n * (t[0] - t0[0]),
        "bound_theta": lambda t: t[0] / n,
    }
    return CatalogEntry(model.name, model, {"theta": _const_theta()},
                        {"mean": Predictor(_mean, 1, "mean")}, closed)


def _ar1_plugin(x):
    num = np.sum(x[:, 1:] * x[:, :-1], axis=1)
    den = np.sum(x[:, :-1] ** 2, axis=1)
    return (num / den * x[:, -1])[:, None]


def ar1_prediction(n: int = 20) -> CatalogEntry:
    """Stationary AR(1) of length n with the next value Y = X_{n+1} as target.

    r(x, theta) = theta x_n is E[Y | X]; the incompressible term E(r - Y)^2 is the
    innovation variance 1, and G = E X_n = 0 makes the bound for r trivial.
    """
    model = StationaryAR1(n)
    joint = JointModel(StationaryAR1(n + 1), n)
    predictands = {
        "next_conditional": Predictand(lambda x, t: t[0] * x[:, -1:], 1,
                                       lambda x, t: x[:, -1:, None], "next_conditional"),
    }
    predictors = {"plugin": Predictor(_ar1_plugin, 1, "plugin")}
    closed = {
        "stationary_variance": lambda t: 1.0 / (1 - t[0] ** 2),
        "incompressible": 1.0,
        "G_next_conditional": 0.0,
        "g_xy": lambda x, y, t: y[:, :1],
        "r": lambda x, t: t[0] * x[:, -1:],
    }
    return CatalogEntry(model.name, model, predictands, predictors, closed, joint=joint)


def uniform_scale() -> CatalogEntry:
    """Uniform(0, theta): support depends on theta, the standard non-L2-differentiable case."""
    model = UniformScale()
    return CatalogEntry(model.name, model, {"theta": _const_theta()},
                        {"max": Predictor(lambda x: x.max(axis=1, keepdims=True), 1, "max")},
                        {"score": lambda x, t: -1.0 / t[0]})


class ExponentialTilt(DominatedModel):
    """Family with log f_theta(x) = log f_base(x) + A(theta)'p(x) - B(x, theta)."""

    def __init__(self, base: DominatedModel, base_theta, p: Predictor, A: Callable, B: Callable,
                 domain: ParameterDomain, name: str = "exp_tilt", sampler: Optional[Callable] = None):
        super().__init__(domain)
        self.base = base
        self.base_theta = base.domain.check(base_theta)
        self.p, self.A, self.B = p, A, B
        self.measure = base.measure
        self.obs_dim = base.obs_dim
        self.name = name
        self._sampler = sampler

    def log_density(self, x, theta):
        a = np.asarray(self.A(theta), dtype=float).reshape(-1)
        return (self.base.log_density(x, self.base_theta) + self.p.value(x) @ a
                - np.asarray(self.B(x, theta), dtype=float).reshape(-1))

    def draw(self, rng, theta, size):
        if self._sampler is None:
            return super().draw(rng, theta, size)
        return self._sampler(rng, theta, size)

    def quadrature_box(self, theta, width):
        return self.base.quadrature_box(self.base_theta, width)

    def enumerate_support(self, theta, tail):
        return self.base.enumerate_support(self.base_theta, tail)


def _derived_target(A: Callable, B: Callable, k: int, d: int,
                    jac_A: Optional[Callable], grad_B: Optional[Callable]) -> Predictand:
    """g(x, theta) = ((J A)')^{-1} grad_theta B(x, theta), the predictand p is efficient for."""

    def ja(theta):
        if jac_A is not None:
            return np.asarray(jac_A(theta), dtype=float).reshape(k, d)
        h = 1e-4 * (1 + np.abs(theta))
        out = np.empty((k, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h[i]
            out[:, i] = (np.asarray(A(theta + e), dtype=float).reshape(k)
                         - np.asarray(A(theta - e), dtype=float).reshape(k)) / (2 * h[i])
        return out

    def gb(x, theta):
        if grad_B is not None:
            return np.asarray(grad_B(x, theta), dtype=float).reshape(x.shape[0], d)
        h = 1e-4 * (1 + np.abs(theta))
        out = np.empty((x.shape[0], d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h[i]
            out[:, i] = (np.asarray(B(x, theta + e), dtype=float).reshape(-1)
                         - np.asarray(B(x, theta - e), dtype=float).reshape(-1)) / (2 * h[i])
        return out

    def g(x, theta):
        m = ja(theta).T
        return np.linalg.solve(m, gb(x, theta).T).T

    return Predictand(g, k, None, "efficient_target")


def exponential_family_builder(p: Predictor, A: Callable, B: Callable, base: DominatedModel,
                               base_theta, domain: ParameterDomain, check_grid: Sequence,
                               spec: Optional[IntegrationSpec] = None, name: str = "exp_tilt",
                               jac_A: Optional[Callable] = None, grad_B: Optional[Callable] = None,
                               sampler: Optional[Callable] = None, norm_tol: float = 1e-6) -> CatalogEntry:
    """Family exp(A(theta)'p(x) - B(x, theta)) relative to a fixed base law.

    ``A`` maps theta to R^k and ``B`` maps a batch of observations and theta to
    R^N. The normalization is verified on ``check_grid`` (raising
    `NormalizationError`), and a singular Fisher matrix on the grid is recorded
    in ``warnings`` together with ``closed_forms["fisher_singular"]``.
    """
    base_theta = base.domain.check(base_theta)
    spec = spec or deterministic_spec(base)
    if spec is None:
        raise ConfigError("base model needs exact or quadrature integration for the builder")
    for t in check_grid:
        t = domain.check(t)
        a = np.asarray(A(t), dtype=float).reshape(-1)
        mass = float(expect(base, base_theta,
                            lambda x, t=t, a=a: np.exp(p.value(x) @ a - np.asarray(B(x, t)).reshape(-1)),
                            spec).value)
        if abs(mass - 1) > norm_tol:
            raise NormalizationError(f"{name}: exp(A'p - B) integrates to {mass!r} at theta={t.tolist()}")
    model = ExponentialTilt(base, base_theta, p, A, B, domain, name, sampler)
    warnings, singular = [], False
    for t in check_grid:
        t = domain.check(t)
        fisher = fisher_information(model, t, spec).value
        w = np.linalg.eigvalsh(fisher)
        if w[0] <= 1e-10 * max(1.0, abs(w[-1])):
            singular = True
            warnings.append(f"Fisher information singular at theta={t.tolist()}")
    predictands = {}
    if not singular:
        predictands["efficient_target"] = _derived_target(A, B, p.k, domain.dimension, jac_A, grad_B)
    closed = {"A": A, "B": B, "fisher_singular": singular}
    return CatalogEntry(name, model, predictands, {p.name: p}, closed, warnings=tuple(warnings))


_FACTORIES = {
    "gaussian_location": (gaussian_location, {"n": int, "sigma": float}),
    "gaussian_mean": (gaussian_mean, {"dim": int}),
    "bernoulli": (bernoulli, {"n": int}),
    "poisson": (poisson, {"n": int}),
    "ar1_prediction": (ar1_prediction, {"n": int}),
    "uniform_scale": (uniform_scale, {}),
}


def parse_id(entry_id: str):
    name, _, rest = entry_id.partition(":")
    name = name.strip()
    if name not in _FACTORIES:
        raise ConfigError(f"unknown catalog model {name!r}; known: {sorted(_FACTORIES)}")
    types = _FACTORIES[name][1]
    kwargs: dict[str, Any] = {}
    for part in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, val = part.partition("=")
        if not sep or key not in types:
            raise ConfigError(f"bad parameter {part!r} for {name}; allowed: {sorted(types)}")
        try:
            kwargs[key] = types[key](val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
    return name, kwargs


def get_entry(entry_id: str) -> CatalogEntry:
    name, kwargs = parse_id(entry_id)
    try:
        return _FACTORIES[name][0](**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{entry_id}: {exc}") from exc
