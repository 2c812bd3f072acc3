"""Dominated parametric models: densities, likelihood ratios and seeded sampling.

Observations are handled in batches: an array of shape ``(N, m)`` where ``m`` is
the dimension of the sample space. Every public function also accepts a single
observation (shape ``(m,)`` or a scalar when ``m == 1``) and then returns a
scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, EvaluationError

# Observations generated per counter-based substream.
SAMPLE_CHUNK = 8192


@dataclass(frozen=True)
class ParameterDomain:
    """Open box ``prod_i (lower_i, upper_i)`` in R^d, optionally narrowed by a predicate."""

    dimension: int
    lower: tuple = ()
    upper: tuple = ()
    predicate: Optional[Callable[[np.ndarray], bool]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        lo = self.lower or (-np.inf,) * self.dimension
        hi = self.upper or (np.inf,) * self.dimension
        if len(lo) != self.dimension or len(hi) != self.dimension:
            raise ValueError("bounds must have one entry per coordinate")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.dimension,) or not np.all(np.isfinite(theta)):
            return False
        if np.any(theta <= np.asarray(self.lower)) or np.any(theta >= np.asarray(self.upper)):
            return False
        return True if self.predicate is None else bool(self.predicate(theta))

    def check(self, theta) -> np.ndarray:
        """Return ``theta`` as a float vector, raising `DomainError` if outside."""
        arr = np.asarray(theta, dtype=float).reshape(-1)
        if not self.contains(arr):
            raise DomainError(f"theta={arr.tolist()} outside the open domain "
                              f"{list(zip(self.lower, self.upper))}")
        return arr


@dataclass(frozen=True)
class SampleBatch:
    observations: np.ndarray
    theta: np.ndarray
    seed: int

    def __len__(self):
        return len(self.observations)


class DominatedModel:
    """A family of densities ``f(x, theta)`` with respect to a dominating measure.

    Subclasses implement `log_density` (vectorized over a batch of observations)
    and whichever of the optional capabilities apply:

    * `draw` for sampling,
    * `analytic_score` for the closed-form score,
    * `location_scale` or `quadrature_box` for quadrature (Lebesgue models),
    * `enumerate_support` for exact sums (counting models).

    ``replicates`` > 1 declares the model an iid product of ``replicates`` copies
    of `marginal()`; deterministic Fisher computations use that structure.
    """

    name = "model"
    measure = "lebesgue"  # or "counting"
    obs_dim = 1
    replicates = 1

    def __init__(self, domain: ParameterDomain):
        self.domain = domain

    @property
    def dim(self) -> int:
        return self.domain.dimension

    def log_density(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, theta: np.ndarray, size: int) -> np.ndarray:
        raise CapabilityError(f"{self.name} has no sampler")

    def analytic_score(self, x: np.ndarray, theta: np.ndarray) -> Optional[np.ndarray]:
        return None

    def location_scale(self, theta: np.ndarray):
        """Per-axis location and scale of the law at theta, or None."""
        return None

    def quadrature_box(self, theta: np.ndarray, width: float):
        ls = self.location_scale(theta)
        if ls is None:
            raise CapabilityError(f"{self.name} declares no quadrature box")
        loc, scale = (np.broadcast_to(np.asarray(v, dtype=float), (self.obs_dim,)) for v in ls)
        return loc - width * scale, loc + width * scale

    def enumerate_support(self, theta: np.ndarray, tail: float) -> np.ndarray:
        raise CapabilityError(f"{self.name} cannot enumerate its support")

    def marginal(self) -> "DominatedModel":
        if self.replicates == 1:
            return self
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


def as_batch(x, obs_dim: int):
    """Coerce ``x`` to shape ``(N, obs_dim)``; also report whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or (arr.ndim == 1 and arr.shape[0] == obs_dim and obs_dim > 1):
        return arr.reshape(1, obs_dim), True
    if arr.ndim == 1 and obs_dim == 1:
        return arr.reshape(-1, 1), False
    if arr.ndim == 2 and arr.shape[1] == obs_dim:
        return arr, False
    raise ValueError(f"observations of shape {arr.shape} do not match sample-space dimension {obs_dim}")


def _log_density_checked(model: DominatedModel, xb: np.ndarray, theta: np.ndarray) -> np.ndarray:
    ld = np.asarray(model.log_density(xb, theta), dtype=float)
    if np.any(np.isnan(ld)) or np.any(ld == np.inf):
        raise EvaluationError(f"{model.name}: non-finite log-density at theta={theta.tolist()}")
    return ld


def log_density(model: DominatedModel, x, theta):
    theta = model.domain.check(theta)
    xb, single = as_batch(x, model.obs_dim)
    ld = _log_density_checked(model, xb, theta)
    return float(ld[0]) if single else ld


def density(model: DominatedModel, x, theta):
    """f_theta(x), evaluated as exp(log f) with underflow clamped to zero."""
    theta = model.domain.check(theta)
    xb, single = as_batch(x, model.obs_dim)
    with np.errstate(under="ignore"):
        f = np.exp(_log_density_checked(model, xb, theta))
    return float(f[0]) if single else f


def likelihood_ratio(model: DominatedModel, theta0, theta, x):
    """L_{theta0,theta}(x) = f_theta/f_theta0, +inf where only f_theta0 vanishes, 1 where both do."""
    theta0 = model.domain.check(theta0)
    theta = model.domain.check(theta)
    xb, single = as_batch(x, model.obs_dim)
    lr = _log_ratio(model, theta0, theta, xb)
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(lr)
    return float(out[0]) if single else out


def _log_ratio(model, theta0, theta, xb):
    l0 = _log_density_checked(model, xb, theta0)
    l1 = _log_density_checked(model, xb, theta)
    out = np.empty_like(l0)
    pos0 = l0 > -np.inf
    out[pos0] = l1[pos0] - l0[pos0]
    zero0 = ~pos0
    out[zero0 & (l1 > -np.inf)] = np.inf
    out[zero0 & (l1 == -np.inf)] = 0.0
    return out


def substream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for chunk ``index`` of stream ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def draw_observations(model: DominatedModel, theta: np.ndarray, n: int, seed: int) -> np.ndarray:
    chunks = []
    for c in range(-(-n // SAMPLE_CHUNK)):
        size = min(SAMPLE_CHUNK, n - c * SAMPLE_CHUNK)
        chunks.append(np.asarray(model.draw(substream(seed, c), theta, size), dtype=float)
                      .reshape(size, model.obs_dim))
    return np.concatenate(chunks, axis=0)


def sample(model: DominatedModel, theta, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` observations at ``theta``; identical (theta, n, seed) give identical batches.

    Observation ``i`` depends only on ``(seed, i // SAMPLE_CHUNK)``, so a batch of
    size ``n`` is a prefix of any larger batch with the same seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    theta = model.domain.check(theta)
    obs = draw_observations(model, theta, int(n), int(seed))
    return SampleBatch(observations=obs, theta=theta, seed=int(seed))


def numeric_score(model: DominatedModel, xb: np.ndarray, theta: np.ndarray,
                  step: Optional[Sequence[float]] = None) -> np.ndarray:
    """Central finite differences of log f in each parameter coordinate, shape (N, d)."""
    d = model.dim
    steps = (1e-5 * (1.0 + np.abs(theta))) if step is None else np.broadcast_to(
        np.asarray(step, dtype=float), (d,))
    out = np.empty((xb.shape[0], d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = steps[i]
        up = model.domain.check(theta + e)
        dn = model.domain.check(theta - e)
        out[:, i] = (model.log_density(xb, up) - model.log_density(xb, dn)) / (2 * steps[i])
    return out
