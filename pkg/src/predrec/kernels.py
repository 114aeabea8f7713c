"""Kernel densities ``k(x | u)`` for the supported mixture families.

Each family is available as plain vectorized functions and as a kernel object
used by the estimation engines.  Kernel objects evaluate one observation
against many mixing points at once::

    prepared = kernel.prepare(U)        # (T, dim_u) mixing points
    k = kernel.evaluate(x, prepared)    # (T,) densities, floored at 1e-300

All evaluations are floored at ``DENSITY_FLOOR`` so that ratios of kernel
values stay defined.
"""

from __future__ import annotations

import numpy as np

from .core import EUCLIDEAN, MARKED, SPHERE, MARK_OFFSET, SPATIAL_EXTENT

DENSITY_FLOOR = 1e-300
_LOG_2PI = np.log(2.0 * np.pi)


def _floor(v):
    return np.maximum(v, DENSITY_FLOOR)


def _chunk_rows(n_cols, budget=4_000_000):
    return max(1, budget // max(1, n_cols))


# ---------------------------------------------------------------------------
# isotropic and bivariate Gaussian kernels
# ---------------------------------------------------------------------------

def eval_gaussian_iso(x, u, sigma2):
    """``N_d(x | u, sigma2 * I)``; ``u`` may stack many means along axis 0."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != x.shape[-1]:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, u has {u.shape[-1]}")
    d = x.shape[-1]
    r2 = np.sum((x - u) ** 2, axis=-1)
    return _floor(np.exp(-0.5 * r2 / sigma2 - 0.5 * d * np.log(2 * np.pi * sigma2)))


def bivariate_params(point):
    point = np.asarray(point, dtype=float)
    mu1, mu2, v1, v2, rho = (point[..., j] for j in range(5))
    if np.any(v1 <= 0) or np.any(v2 <= 0):
        raise ValueError("variances must be positive")
    if np.any(np.abs(rho) >= 1):
        raise ValueError("covariance not positive definite (|rho| >= 1)")
    return mu1, mu2, v1, v2, rho


def eval_gaussian_bivariate_full(x, point):
    """Bivariate normal at ``x`` with mixing point ``(mu1, mu2, v1, v2, rho)``."""
    x = np.asarray(x, dtype=float)
    mu1, mu2, v1, v2, rho = bivariate_params(point)
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    a = (x[..., 0] - mu1) / s1
    b = (x[..., 1] - mu2) / s2
    om = 1.0 - rho * rho
    q = (a * a - 2 * rho * a * b + b * b) / om
    return _floor(np.exp(-0.5 * q) / (2 * np.pi * s1 * s2 * np.sqrt(om)))


# ---------------------------------------------------------------------------
# angular Gaussian on the unit sphere
# ---------------------------------------------------------------------------

def spherical_angles(mu):
    """Polar angle from +z in [0, pi] and azimuth in [0, 2 pi)."""
    mu = np.asarray(mu, dtype=float)
    # arctan2 keeps full precision near the poles, unlike arccos
    theta = np.arctan2(np.hypot(mu[..., 0], mu[..., 1]), mu[..., 2])
    phi = np.mod(np.arctan2(mu[..., 1], mu[..., 0]), 2 * np.pi)
    return theta, phi


def _check_unit(v, what="vector"):
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > 1e-12):
        raise ValueError(f"{what} must have unit norm")
    return v


def rotation_matrix(mu) -> np.ndarray:
    """Rotation taking ``(0, 0, 1)`` to the unit vector ``mu``."""
    mu = _check_unit(mu, "mu")
    theta, phi = spherical_angles(mu)
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    return np.array([
        [ct * cp, -sp, st * cp],
        [ct * sp, cp, st * sp],
        [-st, 0.0, ct],
    ])


def angular_sigma(mu, beta) -> np.ndarray:
    """Shape matrix ``Q diag(1, 1, beta^-2) Q^T`` whose long axis is ``mu``."""
    q = rotation_matrix(mu)
    return q @ np.diag([1.0, 1.0, beta ** -2.0]) @ q.T


def eval_angular_gaussian(x, mu, beta):
    """Angular Gaussian density on the sphere (surface measure).

    Closed form of ``|S|^{-1/2} (x^T S^{-1} x)^{-3/2} / (4 pi)`` with
    ``S = angular_sigma(mu, beta)``: ``x^T S^{-1} x = 1 + (beta^2 - 1) c^2``
    where ``c = x . mu`` and ``|S|^{-1/2} = beta``.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    c = np.sum(x * mu, axis=-1)
    quad = 1.0 + (beta * beta - 1.0) * c * c
    return _floor(beta * quad ** -1.5 / (4 * np.pi))


def sample_angular_gaussian(mu, beta, rng):
    """Project ``z ~ N(0, angular_sigma(mu, beta))`` onto the sphere.

    ``mu`` is ``(n, 3)``; ``beta`` a scalar or ``(n,)``.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (len(mu),))
    eps = rng.standard_normal(mu.shape)
    along = np.sum(eps * mu, axis=1)
    z = eps + ((1.0 / beta - 1.0) * along)[:, None] * mu
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# marked point process kernel
# ---------------------------------------------------------------------------

def correlation_is_pd(r):
    """Whether correlations ``(r12, r13, r23)`` form a PD 3x3 matrix."""
    r = np.asarray(r, dtype=float)
    r12, r13, r23 = r[..., 0], r[..., 1], r[..., 2]
    det = 1.0 - r12 ** 2 - r13 ** 2 - r23 ** 2 + 2.0 * r12 * r13 * r23
    return (np.abs(r12) < 1) & (np.abs(r13) < 1) & (np.abs(r23) < 1) & (det > 0)


def marked_covariance(point) -> np.ndarray:
    """Assemble 3x3 covariances from ``(..., log v1..3, r12, r13, r23)``."""
    point = np.asarray(point, dtype=float)
    sd = np.exp(0.5 * point[..., 3:6])
    r12, r13, r23 = point[..., 6], point[..., 7], point[..., 8]
    one = np.ones_like(r12)
    corr = np.stack([
        np.stack([one, r12, r13], -1),
        np.stack([r12, one, r23], -1),
        np.stack([r13, r23, one], -1),
    ], -2)
    return corr * sd[..., :, None] * sd[..., None, :]


def marked_transform(p):
    """Map ``(s1, s2, mark)`` to ``(logit(s1/200), logit(s2/200), log(mark-2))``
    and return the Jacobian factor ``(mark-2) * prod v (1 - v)``."""
    p = np.asarray(p, dtype=float)
    v = p[..., :2] / SPATIAL_EXTENT
    y = p[..., 2] - MARK_OFFSET
    z = np.concatenate([np.log(v / (1 - v)), np.log(y)[..., None]], axis=-1)
    jac = y * np.prod(v * (1 - v), axis=-1)
    return z, jac


def _check_marked(p):
    p = np.asarray(p, dtype=float)
    s, mark = p[..., :2], p[..., 2]
    if np.any(s <= 0) or np.any(s >= SPATIAL_EXTENT) or np.any(mark <= MARK_OFFSET):
        raise ValueError("marked point outside (0, 200)^2 x (2, inf)")
    return p


def _mvn3_prepare(point, reduced=False):
    point = np.array(point, dtype=float, ndmin=2)
    if reduced:
        point[:, 6:9] = 0.0
    elif not np.all(correlation_is_pd(point[:, 6:9])):
        raise ValueError("covariance not positive definite")
    cov = marked_covariance(point)
    chol = np.linalg.cholesky(cov)
    prec = np.linalg.inv(cov)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    return point[:, :3], prec, logdet


def _mvn3_eval(z, mean, prec, logdet):
    d = z - mean
    q = np.einsum("ti,tij,tj->t", d, prec, d)
    return np.exp(-0.5 * q - 0.5 * logdet - 1.5 * _LOG_2PI)


def eval_marked_pp_kernel(p, point):
    """Trivariate normal on the transformed scale divided by the Jacobian.

    The value is a density in ``(s1/200, s2/200, mark)``; divide by ``200**2``
    for a density in raw location units.
    """
    p = _check_marked(p)
    mean, prec, logdet = _mvn3_prepare(point)
    z, jac = marked_transform(p)
    out = _floor(_mvn3_eval(z, mean, prec, logdet) / jac)
    return out if np.ndim(point) > 1 or np.ndim(p) > 1 else float(out[0])


def conditional_mark_component(s, point, reduced=False):
    """Per mixing point: conditional mean and variance of ``log(mark - 2)``
    given the location, and the marginal location density (with Jacobian).

    Returns arrays ``(cond_mean, cond_var, marginal_weight)`` of length T.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= SPATIAL_EXTENT):
        raise ValueError("location outside (0, 200)^2")
    point = np.array(point, dtype=float, ndmin=2)
    if reduced:
        point[:, 6:9] = 0.0
    elif not np.all(correlation_is_pd(point[:, 6:9])):
        raise ValueError("covariance not positive definite")
    cov = marked_covariance(point)
    mu = point[:, :3]
    v = s / SPATIAL_EXTENT
    za = np.log(v / (1 - v))
    saa = cov[:, :2, :2]
    sab = cov[:, :2, 2]
    det = saa[:, 0, 0] * saa[:, 1, 1] - saa[:, 0, 1] ** 2
    inv = np.stack([
        np.stack([saa[:, 1, 1], -saa[:, 0, 1]], -1),
        np.stack([-saa[:, 0, 1], saa[:, 0, 0]], -1),
    ], -2) / det[:, None, None]
    d = za - mu[:, :2]
    coef = np.einsum("tij,tj->ti", inv, sab)
    cond_mean = mu[:, 2] + np.sum(coef * d, axis=1)
    cond_var = cov[:, 2, 2] - np.sum(coef * sab, axis=1)
    q = np.einsum("ti,tij,tj->t", d, inv, d)
    marg = np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(det)) / np.prod(v * (1 - v))
    return cond_mean, cond_var, marg


# ---------------------------------------------------------------------------
# kernel objects
# ---------------------------------------------------------------------------

class Kernel:
    """Common interface of the kernel families.

    Mixing points are rows of a ``(T, dim_u)`` array in the family's natural
    coordinates.  ``to_unconstrained``/``from_unconstrained`` map the free
    coordinates to a Euclidean parametrization used by the refresh step.
    """

    family: str
    data_kind = EUCLIDEAN
    dim_x: int
    dim_u: int
    coord_names: tuple

    @property
    def free_index(self):
        return np.arange(self.dim_u)

    def prepare(self, U):
        return np.asarray(U, dtype=float)

    def evaluate(self, x, prepared):
        raise NotImplementedError

    def __call__(self, x, U):
        return self.evaluate(np.asarray(x, dtype=float), self.prepare(U))

    def density_matrix(self, X, U, chunk=None):
        """Kernel values for many observations: shape ``(len(X), T)``."""
        prepared = self.prepare(U)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([self.evaluate(x, prepared) for x in X]) if len(X) else \
            np.empty((0, len(np.atleast_2d(U))))

    def mixture(self, X, U, weights):
        """``density_matrix(X, U) @ weights`` without holding the full matrix."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        rows = _chunk_rows(len(U))
        out = np.empty(len(X))
        for i in range(0, len(X), rows):
            out[i:i + rows] = self.density_matrix(X[i:i + rows], U) @ weights
        return out

    def simulate(self, U, rng):
        raise NotImplementedError

    def is_valid(self, U):
        return np.all(np.isfinite(U), axis=1)

    def to_unconstrained(self, U):
        return np.asarray(U, dtype=float)[:, self.free_index]

    def from_unconstrained(self, Z, template=None):
        U = np.zeros((len(Z), self.dim_u)) if template is None else \
            np.tile(template, (len(Z), 1))
        U[:, self.free_index] = Z
        return U

    def describe(self) -> dict:
        return {"family": self.family}


class GaussianIsoKernel(Kernel):
    family = "gaussian-iso"

    def __init__(self, sigma2=0.5, dim=1):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        self.sigma2 = float(sigma2)
        self.dim_x = self.dim_u = int(dim)
        self.coord_names = tuple(f"u{j + 1}" for j in range(self.dim_u))

    def evaluate(self, x, prepared):
        return eval_gaussian_iso(x, prepared, self.sigma2)

    def density_matrix(self, X, U, chunk=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if X.shape[1] != U.shape[1]:
            raise ValueError("dimension mismatch")
        c = -0.5 * self.dim_x * np.log(2 * np.pi * self.sigma2)
        chunk = chunk or _chunk_rows(len(U))
        out = np.empty((len(X), len(U)))
        for i in range(0, len(X), chunk):
            xs = X[i:i + chunk]
            r2 = (np.sum(xs ** 2, 1)[:, None] - 2 * xs @ U.T + np.sum(U ** 2, 1)[None, :])
            out[i:i + chunk] = np.exp(c - 0.5 * np.maximum(r2, 0.0) / self.sigma2)
        return _floor(out)

    def simulate(self, U, rng):
        U = np.atleast_2d(U)
        return U + np.sqrt(self.sigma2) * rng.standard_normal(U.shape)

    def describe(self):
        return {"family": self.family, "sigma2": self.sigma2, "dim": self.dim_x}


class BivariateGaussianKernel(Kernel):
    """Bivariate normal mixed over ``(mu1, mu2, v1, v2, rho)``."""

    family = "gaussian-bivariate-full"
    dim_x = 2
    dim_u = 5
    coord_names = ("mu1", "mu2", "var1", "var2", "rho")

    def prepare(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        mu1, mu2, v1, v2, rho = bivariate_params(U)
        s1, s2 = np.sqrt(v1), np.sqrt(v2)
        om = 1.0 - rho * rho
        norm = 1.0 / (2 * np.pi * s1 * s2 * np.sqrt(om))
        return mu1, mu2, s1, s2, rho, om, norm

    def evaluate(self, x, prepared):
        mu1, mu2, s1, s2, rho, om, norm = prepared
        a = (x[0] - mu1) / s1
        b = (x[1] - mu2) / s2
        return _floor(norm * np.exp(-0.5 * (a * a - 2 * rho * a * b + b * b) / om))

    def density_matrix(self, X, U, chunk=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mu1, mu2, s1, s2, rho, om, norm = self.prepare(U)
        # the exponent is a quadratic in x: expand once per particle, then one matmul
        c11 = 1.0 / (s1 * s1 * om)
        c22 = 1.0 / (s2 * s2 * om)
        c12 = -2.0 * rho / (s1 * s2 * om)
        coef = np.stack([
            c11, c12, c22,
            -2 * c11 * mu1 - c12 * mu2,
            -2 * c22 * mu2 - c12 * mu1,
            c11 * mu1 * mu1 + c12 * mu1 * mu2 + c22 * mu2 * mu2,
        ])
        lognorm = np.log(norm)
        chunk = chunk or _chunk_rows(len(mu1))
        out = np.empty((len(X), len(mu1)))
        for i in range(0, len(X), chunk):
            x1, x2 = X[i:i + chunk, 0], X[i:i + chunk, 1]
            feats = np.column_stack([x1 * x1, x1 * x2, x2 * x2, x1, x2, np.ones_like(x1)])
            q = out[i:i + chunk]
            np.matmul(feats, coef, out=q)
            np.maximum(q, 0.0, out=q)
            q *= -0.5
            q += lognorm
            np.exp(q, out=q)
            np.maximum(q, DENSITY_FLOOR, out=q)
        return out

    def simulate(self, U, rng):
        U = np.atleast_2d(U)
        mu1, mu2, v1, v2, rho = bivariate_params(U)
        z1, z2 = rng.standard_normal((2, len(U)))
        x1 = mu1 + np.sqrt(v1) * z1
        x2 = mu2 + np.sqrt(v2) * (rho * z1 + np.sqrt(1 - rho * rho) * z2)
        return np.column_stack([x1, x2])

    def is_valid(self, U):
        U = np.atleast_2d(U)
        return np.all(np.isfinite(U), 1) & (U[:, 2] > 0) & (U[:, 3] > 0) & (np.abs(U[:, 4]) < 1)

    def to_unconstrained(self, U):
        U = np.array(U, dtype=float)
        U[:, 2:4] = np.log(U[:, 2:4])
        return U

    def from_unconstrained(self, Z, template=None):
        U = np.array(Z, dtype=float)
        U[:, 2:4] = np.exp(U[:, 2:4])
        return U


class AngularGaussianKernel(Kernel):
    """Angular Gaussian mixed over ``(mu, beta)``; with ``beta`` given, the
    concentration is fixed and only the direction is mixed over."""

    family = "angular-gaussian-sphere"
    data_kind = SPHERE
    dim_x = 3

    def __init__(self, beta=None):
        if beta is not None and beta <= 0:
            raise ValueError("beta must be positive")
        self.beta = None if beta is None else float(beta)
        self.dim_u = 3 if beta is not None else 4
        self.coord_names = ("mu_x", "mu_y", "mu_z") + (() if beta is not None else ("beta",))

    def prepare(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        beta = np.full(len(U), self.beta) if self.beta is not None else U[:, 3]
        if np.any(beta <= 0):
            raise ValueError("beta must be positive")
        return U[:, :3], beta

    def evaluate(self, x, prepared):
        mu, beta = prepared
        return eval_angular_gaussian(x, mu, beta)

    def density_matrix(self, X, U, chunk=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mu, beta = self.prepare(U)
        chunk = chunk or _chunk_rows(len(mu))
        out = np.empty((len(X), len(mu)))
        for i in range(0, len(X), chunk):
            c = X[i:i + chunk] @ mu.T
            quad = 1.0 + (beta * beta - 1.0) * c * c
            out[i:i + chunk] = beta * quad ** -1.5 / (4 * np.pi)
        return _floor(out)

    def simulate(self, U, rng):
        mu, beta = self.prepare(U)
        return sample_angular_gaussian(mu, beta, rng)

    def is_valid(self, U):
        U = np.atleast_2d(U)
        ok = np.all(np.isfinite(U), 1) & (np.linalg.norm(U[:, :3], axis=1) > 0)
        if self.beta is None:
            ok &= U[:, 3] > 0
        return ok

    def to_unconstrained(self, U):
        U = np.array(U, dtype=float)
        if self.beta is None:
            U[:, 3] = np.log(U[:, 3])
        return U

    def from_unconstrained(self, Z, template=None):
        U = np.array(Z, dtype=float)
        U[:, :3] /= np.linalg.norm(U[:, :3], axis=1, keepdims=True)
        if self.beta is None:
            U[:, 3] = np.exp(U[:, 3])
        return U

    def describe(self):
        return {"family": self.family, "beta": self.beta}


class MarkedPPKernel(Kernel):
    """Trivariate normal on the logit-location / log-mark scale.

    Mixing points are ``(mu1, mu2, mu3, log v1, log v2, log v3, r12, r13, r23)``.
    The reduced variant ignores the correlations (pinned at 0).
    """

    family = "marked-pp-trivariate"
    data_kind = MARKED
    dim_x = 3
    dim_u = 9
    coord_names = ("mu1", "mu2", "mu3", "logvar1", "logvar2", "logvar3", "r12", "r13", "r23")

    def __init__(self, reduced=False):
        self.reduced = bool(reduced)

    @property
    def free_index(self):
        return np.arange(6) if self.reduced else np.arange(9)

    def prepare(self, U):
        return _mvn3_prepare(U, self.reduced)

    def evaluate(self, x, prepared):
        mean, prec, logdet = prepared
        z, jac = marked_transform(x)
        return _floor(_mvn3_eval(z, mean, prec, logdet) / jac)

    def density_matrix(self, X, U, chunk=None):
        mean, prec, logdet = self.prepare(U)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z, jac = marked_transform(X)
        out = np.empty((len(X), len(mean)))
        for i, z in enumerate(Z):
            out[i] = _mvn3_eval(z, mean, prec, logdet) / jac[i]
        return _floor(out)

    def simulate(self, U, rng):
        U = np.array(U, dtype=float, ndmin=2)
        if self.reduced:
            U[:, 6:9] = 0.0
        chol = np.linalg.cholesky(marked_covariance(U))
        z = U[:, :3] + np.einsum("tij,tj->ti", chol, rng.standard_normal((len(U), 3)))
        v = 1.0 / (1.0 + np.exp(-z[:, :2]))
        # keep strictly inside the open window after rounding
        v = np.clip(v, 1e-12, 1 - 1e-12)
        return np.column_stack([SPATIAL_EXTENT * v, MARK_OFFSET + np.exp(z[:, 2])])

    def is_valid(self, U):
        U = np.atleast_2d(U)
        ok = np.all(np.isfinite(U), 1)
        if not self.reduced:
            ok &= correlation_is_pd(U[:, 6:9])
        return ok

    def from_unconstrained(self, Z, template=None):
        U = np.zeros((len(Z), 9))
        U[:, self.free_index] = Z
        return U

    def describe(self):
        return {"family": self.family, "variant": "reduced" if self.reduced else "full"}
