"""Seeded random generation: primitive draws, mixing-distribution samplers,
and forward simulation of mixture data.

Every random consumer gets its own ``numpy.random.Generator`` backed by PCG64,
seeded from ``SeedSequence(seed, spawn_key=(stream_id,))``.  The bit stream is
therefore fixed by the pair ``(seed, stream_id)`` and distinct stream ids give
independent sequences.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .core import Dataset, EUCLIDEAN

# Stream ids reserved per consumer.
PARTICLE_STREAM = 1
DATA_STREAM = 2
PERMUTATION_STREAM = 3
REFRESH_STREAM = 4
KL_STREAM = 5
TRUTH_STREAM = 6


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng_stream(0 if rng is None else int(rng))


# ---------------------------------------------------------------------------
# primitive draws
# ---------------------------------------------------------------------------

def sample_uniform_box(bounds, rng, size=None) -> np.ndarray:
    """Uniform draws on a box given as a sequence of ``(lo, hi)`` pairs.

    A degenerate pair ``lo == hi`` pins that coordinate.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(hi < lo):
        raise ValueError("box bounds need lo <= hi")
    shape = (len(bounds),) if size is None else (size, len(bounds))
    return lo + (hi - lo) * rng.random(shape)


def sample_uniform_sphere(rng, size=None) -> np.ndarray:
    shape = (3,) if size is None else (size, 3)
    z = rng.standard_normal(shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def sample_scaled_beta(a, b, lo, hi, rng, size=None):
    if a <= 0 or b <= 0:
        raise ValueError("beta shape parameters must be positive")
    if not lo < hi:
        raise ValueError("need lo < hi")
    return lo + (hi - lo) * rng.beta(a, b, size)


def sample_gamma(shape, rate, rng, size=None):
    if shape <= 0 or rate <= 0:
        raise ValueError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate, size)


def sample_mvnormal(mean, cov, rng, size=None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    shape = mean.shape if size is None else (size,) + mean.shape
    z = rng.standard_normal(shape)
    return mean + z @ chol.T


def sample_mvt(location, scale, df, rng, size=None) -> np.ndarray:
    """Multivariate Student-t draws; covariance is ``scale * df / (df - 2)``."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    location = np.asarray(location, dtype=float)
    z = sample_mvnormal(np.zeros_like(location), scale, rng, size)
    g = rng.chisquare(df, size)
    return location + z / np.sqrt(np.asarray(g) / df)[..., None]


# ---------------------------------------------------------------------------
# mixing-distribution samplers
#
# A sampler exposes ``dim``, ``sample(size, rng) -> (size, dim)`` and, when the
# density is known, ``pdf(points) -> (size,)``.
# ---------------------------------------------------------------------------

class UniformBox:
    """Uniform distribution on a box; degenerate sides are pinned values."""

    def __init__(self, bounds):
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if np.any(self.bounds[:, 1] < self.bounds[:, 0]):
            raise ValueError("box bounds need lo <= hi")
        self.dim = len(self.bounds)

    def sample(self, size, rng):
        return sample_uniform_box(self.bounds, rng, size)

    def pdf(self, points):
        points = np.atleast_2d(points)
        width = self.bounds[:, 1] - self.bounds[:, 0]
        free = width > 0
        vol = float(np.prod(width[free]))
        inside = np.all(
            (points >= self.bounds[:, 0]) & (points <= self.bounds[:, 1]), axis=1
        )
        return np.where(inside, 1.0 / vol, 0.0)


class ScaledBetaProduct:
    """Independent scaled beta marginals ``lo + (hi - lo) * Beta(a, b)``."""

    def __init__(self, params):
        self.params = [tuple(map(float, p)) for p in params]
        self.dim = len(self.params)

    def sample(self, size, rng):
        cols = [sample_scaled_beta(a, b, lo, hi, rng, size) for a, b, lo, hi in self.params]
        return np.column_stack(cols)

    def pdf(self, points):
        points = np.atleast_2d(points)
        out = np.ones(len(points))
        for j, (a, b, lo, hi) in enumerate(self.params):
            out *= stats.beta.pdf(points[:, j], a, b, loc=lo, scale=hi - lo)
        return out


class PointMass:
    def __init__(self, point):
        self.point = np.atleast_1d(np.asarray(point, dtype=float))
        self.dim = self.point.size

    def sample(self, size, rng):
        return np.tile(self.point, (size, 1))


class SphereTimesUniform:
    """Uniform direction on the sphere times an independent uniform ``beta``.

    With ``beta_bounds=None`` only the direction is drawn (fixed-concentration
    kernel).  A zero-width interval pins ``beta``.
    """

    def __init__(self, beta_bounds=(0.0, 0.5)):
        self.beta_bounds = None if beta_bounds is None else tuple(map(float, beta_bounds))
        self.dim = 3 if beta_bounds is None else 4

    def sample(self, size, rng):
        mu = sample_uniform_sphere(rng, size)
        if self.beta_bounds is None:
            return mu
        lo, hi = self.beta_bounds
        # (lo, hi]: 1 - U with U in [0, 1) excludes lo
        beta = hi - (hi - lo) * rng.random(size)
        return np.column_stack([mu, beta])

    def pdf(self, points):
        points = np.atleast_2d(points)
        dens = np.full(len(points), 1.0 / (4.0 * np.pi))
        if self.beta_bounds is not None:
            lo, hi = self.beta_bounds
            if hi > lo:
                b = points[:, 3]
                dens = dens * np.where((b > lo) & (b <= hi), 1.0 / (hi - lo), 0.0)
        return dens


class AngularMixtureDirections:
    """Directions drawn from an equal-weight mixture of angular Gaussians, with
    a fixed kernel concentration appended as the last coordinate.

    This is the smooth bimodal mixing distribution used for the sphere study.
    """

    def __init__(self, centers, concentration, beta_point):
        self.centers = np.asarray(centers, dtype=float)
        self.concentration = float(concentration)
        self.beta_point = beta_point
        self.dim = 3 if beta_point is None else 4

    def sample(self, size, rng):
        from .kernels import sample_angular_gaussian

        which = rng.integers(len(self.centers), size=size)
        mu = sample_angular_gaussian(self.centers[which], self.concentration, rng)
        if self.beta_point is None:
            return mu
        return np.column_stack([mu, np.full(size, float(self.beta_point))])


class Example3Truth:
    """Independent ``mu1 ~ N(5, 9)``, ``mu2 ~ N(10, 9)``, ``s1 ~ Gamma(1, 1)``,
    ``s2 ~ Gamma(5, 1)`` (variances) and ``rho ~ Beta(10, 5)``."""

    dim = 5
    mu_mean = np.array([5.0, 10.0])
    mu_sd = 3.0
    var_shapes = (1.0, 5.0)
    rho_ab = (10.0, 5.0)

    def sample(self, size, rng):
        mu = self.mu_mean + self.mu_sd * rng.standard_normal((size, 2))
        v1 = sample_gamma(self.var_shapes[0], 1.0, rng, size)
        v2 = sample_gamma(self.var_shapes[1], 1.0, rng, size)
        rho = rng.beta(*self.rho_ab, size)
        return np.column_stack([mu, v1, v2, rho])

    def marginal_ppf(self, q):
        """Quantiles of each coordinate's true marginal, shape ``(len(q), 5)``."""
        q = np.asarray(q, dtype=float)
        return np.column_stack([
            stats.norm.ppf(q, self.mu_mean[0], self.mu_sd),
            stats.norm.ppf(q, self.mu_mean[1], self.mu_sd),
            stats.gamma.ppf(q, self.var_shapes[0]),
            stats.gamma.ppf(q, self.var_shapes[1]),
            stats.beta.ppf(q, *self.rho_ab),
        ])

    def mixture_pdf(self, x, rng, n_inner=4000):
        """Accurate evaluation of the true mixture density at points ``x``.

        The means are integrated out exactly (Gaussian convolution); the
        covariance parameters are averaged over ``n_inner`` draws.
        """
        x = np.atleast_2d(x)
        v1 = sample_gamma(self.var_shapes[0], 1.0, rng, n_inner)
        v2 = sample_gamma(self.var_shapes[1], 1.0, rng, n_inner)
        rho = rng.beta(*self.rho_ab, n_inner)
        tau2 = self.mu_sd ** 2
        a = v1 + tau2
        c = v2 + tau2
        b = rho * np.sqrt(v1 * v2)
        det = a * c - b * b
        d0 = x[:, 0:1] - self.mu_mean[0]
        d1 = x[:, 1:2] - self.mu_mean[1]
        q = (c * d0 * d0 - 2 * b * d0 * d1 + a * d1 * d1) / det
        dens = np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(det))
        return dens.mean(axis=1)


class MarkedPPPrior:
    """Initial guess for the marked-point mixing distribution.

    Coordinates are ``(mu1, mu2, mu3, log v1, log v2, log v3, r12, r13, r23)``.
    Means and log-variances are uniform on boxes; correlations are uniform on
    ``corr_bounds`` with rejection of non positive-definite draws, or pinned at
    zero when ``reduced``.
    """

    def __init__(self, mean_bounds=(-4.0, 4.0), logvar_bounds=(np.log(0.05), np.log(8.0)),
                 corr_bounds=(-0.9, 0.9), reduced=False, max_tries=100):
        self.mean_bounds = tuple(mean_bounds)
        self.logvar_bounds = tuple(logvar_bounds)
        self.corr_bounds = tuple(corr_bounds)
        self.reduced = reduced
        self.max_tries = max_tries
        self.dim = 9

    def sample(self, size, rng):
        from .kernels import correlation_is_pd

        out = np.empty((size, 9))
        filled = 0
        for _ in range(self.max_tries):
            m = size - filled
            mu = sample_uniform_box([self.mean_bounds] * 3, rng, m)
            lv = sample_uniform_box([self.logvar_bounds] * 3, rng, m)
            if self.reduced:
                r = np.zeros((m, 3))
            else:
                r = sample_uniform_box([self.corr_bounds] * 3, rng, m)
            ok = correlation_is_pd(r)
            k = int(ok.sum())
            out[filled:filled + k] = np.column_stack([mu, lv, r])[ok]
            filled += k
            if filled == size:
                return out
        raise RuntimeError("positive-definite rejection budget exhausted")


# ---------------------------------------------------------------------------

def sample_mixture_data(true_mixing, kernel, n, rng, keep_latents=True) -> Dataset:
    """Two-stage draw: latents from ``true_mixing``, then one observation from
    the kernel at each latent."""
    latents = np.asarray(true_mixing.sample(n, rng), dtype=float).reshape(n, -1)
    x = kernel.simulate(latents, rng)
    return Dataset(x, kind=getattr(kernel, "data_kind", EUCLIDEAN),
                   latents=latents if keep_latents else None)
