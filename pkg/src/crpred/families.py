"""Concrete parametric families used by the catalog."""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from .expectation import product_support
from .model import DominatedModel, ParameterDomain

_LOG_2PI = np.log(2 * np.pi)


class GaussianLocation(DominatedModel):
    """n iid draws from N(theta, sigma^2); theta in R."""

    def __init__(self, n: int = 1, sigma: float = 1.0):
        if n < 1 or sigma <= 0:
            raise ValueError("need n >= 1 and sigma > 0")
        super().__init__(ParameterDomain(1))
        self.n, self.sigma = int(n), float(sigma)
        self.obs_dim = self.n
        self.replicates = self.n
        self.name = f"gaussian_location:n={self.n},sigma={self.sigma:g}"

    def log_density(self, x, theta):
        z = (x - theta[0]) / self.sigma
        return -0.5 * np.sum(z * z, axis=1) - self.n * (np.log(self.sigma) + 0.5 * _LOG_2PI)

    def draw(self, rng, theta, size):
        return theta[0] + self.sigma * rng.standard_normal((size, self.n))

    def analytic_score(self, x, theta):
        return (np.sum(x - theta[0], axis=1) / self.sigma**2)[:, None]

    def location_scale(self, theta):
        return theta[0], self.sigma

    def marginal(self):
        return GaussianLocation(1, self.sigma)


class GaussianMean(DominatedModel):
    """One draw from N(theta, I_dim); theta in R^dim."""

    def __init__(self, dim: int = 2):
        super().__init__(ParameterDomain(int(dim)))
        self.obs_dim = int(dim)
        self.name = f"gaussian_mean:dim={self.obs_dim}"

    def log_density(self, x, theta):
        z = x - theta
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * self.obs_dim * _LOG_2PI

    def draw(self, rng, theta, size):
        return theta + rng.standard_normal((size, self.obs_dim))

    def analytic_score(self, x, theta):
        return x - theta

    def location_scale(self, theta):
        return theta, 1.0


class Bernoulli(DominatedModel):
    """n iid Bernoulli(theta) indicators; theta in (0, 1)."""

    measure = "counting"

    def __init__(self, n: int = 1):
        super().__init__(ParameterDomain(1, (0.0,), (1.0,)))
        self.n = int(n)
        self.obs_dim = self.replicates = self.n
        self.name = f"bernoulli:n={self.n}"

    def log_density(self, x, theta):
        t = theta[0]
        valid = np.all((x == 0) | (x == 1), axis=1)
        k = np.sum(x, axis=1)
        out = k * np.log(t) + (self.n - k) * np.log1p(-t)
        return np.where(valid, out, -np.inf)

    def draw(self, rng, theta, size):
        return (rng.random((size, self.n)) < theta[0]).astype(float)

    def analytic_score(self, x, theta):
        t = theta[0]
        return np.sum(x / t - (1 - x) / (1 - t), axis=1)[:, None]

    def enumerate_support(self, theta, tail):
        return product_support([(0.0, 1.0)] * self.n)

    def marginal(self):
        return Bernoulli(1)


class Poisson(DominatedModel):
    """n iid Poisson(theta) counts; theta in (0, inf)."""

    measure = "counting"

    def __init__(self, n: int = 1):
        super().__init__(ParameterDomain(1, (0.0,), (np.inf,)))
        self.n = int(n)
        self.obs_dim = self.replicates = self.n
        self.name = f"poisson:n={self.n}"

    def log_density(self, x, theta):
        t = theta[0]
        valid = np.all((x >= 0) & (x == np.floor(x)), axis=1)
        xs = np.where(valid[:, None], x, 0.0)
        out = np.sum(xs * np.log(t) - t - special.gammaln(xs + 1), axis=1)
        return np.where(valid, out, -np.inf)

    def draw(self, rng, theta, size):
        return rng.poisson(theta[0], (size, self.n)).astype(float)

    def analytic_score(self, x, theta):
        return np.sum(x / theta[0] - 1.0, axis=1)[:, None]

    def enumerate_support(self, theta, tail):
        # per-coordinate tail so the product support misses at most ``tail`` in total
        # (isf loses accuracy this far out, so walk up the log survival function)
        mu = theta[0]
        top = int(mu + 10 * np.sqrt(mu)) + 10
        while stats.poisson.logsf(top, mu) > np.log(tail / self.n):
            top = int(top * 1.25) + 1
        return product_support([np.arange(top + 1, dtype=float)] * self.n)

    def marginal(self):
        return Poisson(1)


class StationaryAR1(DominatedModel):
    """Stationary zero-mean Gaussian AR(1) path of length n, unit innovation variance.

    X_1 ~ N(0, 1/(1-theta^2)) and X_t = theta X_{t-1} + eps_t for t >= 2.
    """

    def __init__(self, n: int = 20):
        if n < 1:
            raise ValueError("n must be at least 1")
        super().__init__(ParameterDomain(1, (-1.0,), (1.0,)))
        self.n = self.obs_dim = int(n)
        self.name = f"ar1:n={self.n}"

    def log_density(self, x, theta):
        t = theta[0]
        v = 1.0 - t * t
        out = 0.5 * np.log(v) - 0.5 * v * x[:, 0] ** 2 - 0.5 * self.n * _LOG_2PI
        if self.n > 1:
            resid = x[:, 1:] - t * x[:, :-1]
            out = out - 0.5 * np.sum(resid * resid, axis=1)
        return out

    def draw(self, rng, theta, size):
        t = theta[0]
        z = rng.standard_normal((size, self.n))
        x = np.empty_like(z)
        x[:, 0] = z[:, 0] / np.sqrt(1 - t * t)
        for j in range(1, self.n):
            x[:, j] = t * x[:, j - 1] + z[:, j]
        return x

    def analytic_score(self, x, theta):
        t = theta[0]
        s = -t / (1 - t * t) + t * x[:, 0] ** 2
        if self.n > 1:
            s = s + np.sum((x[:, 1:] - t * x[:, :-1]) * x[:, :-1], axis=1)
        return s[:, None]

    def location_scale(self, theta):
        return 0.0, 1.0 / np.sqrt(1 - theta[0] ** 2)


class UniformScale(DominatedModel):
    """Uniform(0, theta). Its support moves with theta, so it is not L2-differentiable."""

    def __init__(self):
        super().__init__(ParameterDomain(1, (0.0,), (np.inf,)))
        self.name = "uniform_scale"

    def log_density(self, x, theta):
        inside = (x[:, 0] >= 0) & (x[:, 0] < theta[0])
        return np.where(inside, -np.log(theta[0]), -np.inf)

    def draw(self, rng, theta, size):
        return theta[0] * rng.random((size, 1))

    def analytic_score(self, x, theta):
        return np.full((x.shape[0], 1), -1.0 / theta[0])

    def quadrature_box(self, theta, width):
        return np.array([0.0]), np.array([theta[0]])
