"""Reportable quantities from fitted grids and particle clouds: mixture
densities, smoothed mixing densities, conditional mark densities, L1 and KL."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import Dataset, MARK_OFFSET
from .kernels import DENSITY_FLOOR, MarkedPPKernel, conditional_mark_component
from .particles import ParticleSet, ess
from .quadrature import GridDensity, mixture_density_quadrature, sample_grid_mixture, trapezoid_weights


class LocationOutsideSupport(ValueError):
    """No particle puts appreciable location mass at the queried point."""


# ---------------------------------------------------------------------------
# density estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """A pointwise-evaluable density, optionally with a sampler.

    ``evaluate(points)`` takes an ``(m, d)`` array; ``sample(n, rng)`` returns
    ``(n, d)`` draws when available.
    """

    kind: str
    evaluate: Callable
    sample: Callable | None = None

    def __call__(self, points):
        return self.evaluate(points)


def grid_mixing_estimate(grid: GridDensity) -> DensityEstimate:
    """Mixing density of a grid, linearly interpolated between nodes."""
    if not grid.axes or len(grid.axes) != grid.dim:
        raise ValueError("interpolation needs a tensor grid")
    interp = RegularGridInterpolator(grid.axes, grid.values.reshape(grid.shape),
                                     bounds_error=False, fill_value=0.0)
    return DensityEstimate("grid", lambda pts: interp(np.atleast_2d(pts)))


def grid_mixture_estimate(grid: GridDensity, kernel) -> DensityEstimate:
    return DensityEstimate(
        "grid-mixture",
        lambda X: mixture_density_quadrature(np.atleast_2d(X), grid, kernel),
        lambda n, rng: sample_grid_mixture(grid, kernel, n, rng),
    )


def particle_mixture_estimate(state: ParticleSet, kernel) -> DensityEstimate:
    def draw(n, rng):
        idx = rng.choice(state.T, size=n, p=state.deltas / state.deltas.sum())
        return kernel.simulate(state.particles[idx], rng)

    return DensityEstimate(
        "particle-mixture",
        lambda X: mixture_density_particle(np.atleast_2d(X), state, kernel),
        draw,
    )


def kde_mixing_estimate(state: ParticleSet, bandwidth=None) -> DensityEstimate:
    h = silverman_bandwidth(state) if bandwidth is None else bandwidth
    return DensityEstimate("weighted-kde", lambda pts: weighted_kde(state, h, pts))


def mixture_density_particle(x, state: ParticleSet, kernel):
    """``mean_t k(x | U_t) delta_t`` at one or many ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and x.size == kernel.dim_x
    X = x.reshape(-1, kernel.dim_x)
    out = kernel.mixture(X, state.particles, state.deltas) / state.T
    return float(out[0]) if single else out


def silverman_bandwidth(state: ParticleSet) -> np.ndarray:
    """Per-coordinate ``1.06 * weighted sd * ESS^(-1/5)``."""
    sd = np.sqrt(np.diag(np.atleast_2d(state.weighted_cov())))
    return 1.06 * sd * ess(state) ** -0.2


def weighted_kde(state: ParticleSet, bandwidth, eval_points, chunk=None) -> np.ndarray:
    """Product-Gaussian KDE of the particles weighted by ``delta / T``."""
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (state.dim,))
    if np.any(h <= 0):
        raise ValueError("bandwidths must be positive")
    P = np.asarray(eval_points, dtype=float).reshape(-1, state.dim)
    U = state.particles / h
    w = state.deltas / state.T
    norm = 1.0 / (np.prod(h) * (2 * np.pi) ** (state.dim / 2))
    chunk = chunk or max(1, 4_000_000 // state.T)
    out = np.empty(len(P))
    for i in range(0, len(P), chunk):
        q = P[i:i + chunk] / h
        r2 = np.sum(q * q, 1)[:, None] - 2 * q @ U.T + np.sum(U * U, 1)[None, :]
        out[i:i + chunk] = np.exp(-0.5 * np.maximum(r2, 0.0)) @ w
    return out * norm


def plugin_mixing_density(u, data: Dataset, m_hats, p0_pdf, kernel, schedule):
    """Unsmoothed particle estimate ``p0(u) * prod_i (1 + w_i (k(X_i|u)/m_hat_i - 1))``.

    This is the continuous function of the Monte Carlo normalizing constants
    that converges to the exact recursion output as ``T`` grows.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    dens = np.asarray(p0_pdf(u), dtype=float).copy()
    prepared = kernel.prepare(u)
    for i, (x, m) in enumerate(zip(data.values, m_hats), start=1):
        w = schedule.weight_at(i)
        dens *= 1.0 + w * (kernel.evaluate(x, prepared) / m - 1.0)
    return dens


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _values_on(est, grid):
    if callable(est):
        return np.asarray(est(grid.points), dtype=float)
    return np.asarray(est, dtype=float)


def l1_distance(a, b, grid: GridDensity) -> float:
    """Quadrature of ``|a - b|`` over ``grid``; ``a``/``b`` are values on the
    grid or callables of the grid points."""
    return float(np.sum(np.abs(_values_on(a, grid) - _values_on(b, grid)) * grid.cell_weights))


@dataclass
class MetricResult:
    name: str
    value: float
    std_error: float
    flagged_points: int

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def kl_divergence_mc(reference: DensityEstimate, approx: DensityEstimate, sample_source=None,
                     n_mc=100_000, rng=None, name="kl") -> MetricResult:
    """Monte Carlo ``E_ref log(ref / approx)`` with its standard error.

    ``sample_source`` is an array or Dataset of draws from the reference;
    when omitted ``reference.sample(n_mc, rng)`` is used.  Densities are
    floored at 1e-300; points whose log-ratio is still non-finite are dropped
    and counted in ``flagged_points``.
    """
    if sample_source is None:
        if reference.sample is None:
            raise ValueError("reference cannot be sampled; pass sample_source")
        Z = reference.sample(n_mc, rng)
    else:
        Z = getattr(sample_source, "values", sample_source)
    Z = np.asarray(Z, dtype=float)
    Z = Z.reshape(len(Z), -1)
    r = np.maximum(np.asarray(reference(Z), dtype=float), DENSITY_FLOOR)
    a = np.maximum(np.asarray(approx(Z), dtype=float), DENSITY_FLOOR)
    lr = np.log(r) - np.log(a)
    ok = np.isfinite(lr)
    lr = lr[ok]
    n = len(lr)
    se = float(np.std(lr, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return MetricResult(name, float(np.mean(lr)), se, int((~ok).sum()))


def kl_divergence_quadrature(ref_values, approx_values, weights) -> float:
    """``sum w * ref * log(ref / approx)`` over a grid of the data space."""
    r = np.maximum(np.asarray(ref_values, dtype=float), DENSITY_FLOOR)
    a = np.maximum(np.asarray(approx_values, dtype=float), DENSITY_FLOOR)
    return float(np.sum(weights * r * (np.log(r) - np.log(a))))


def weighted_quantiles(values, weights, levels) -> np.ndarray:
    """Quantiles of a weighted sample (left-continuous inverse of the weighted CDF)."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    cdf = np.cumsum(w[order])
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, np.asarray(levels, dtype=float), side="left")
    return v[order][np.minimum(idx, len(v) - 1)]


def total_variation(values) -> float:
    """Discrete total variation ``sum |g_{i+1} - g_i|`` of a sampled curve."""
    return float(np.sum(np.abs(np.diff(np.asarray(values, dtype=float)))))


# ---------------------------------------------------------------------------
# marks
# ---------------------------------------------------------------------------

def _check_mark_grid(mark_grid):
    g = np.asarray(mark_grid, dtype=float)
    if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0) or g[0] <= MARK_OFFSET:
        raise ValueError("mark grid must be increasing and above 2")
    return g


def conditional_mark_density(s, mark_grid, state: ParticleSet, kernel=None) -> np.ndarray:
    """Conditional density of the mark at location ``s``, normalized over
    ``mark_grid`` by the trapezoid rule."""
    kernel = kernel or MarkedPPKernel()
    g = _check_mark_grid(mark_grid)
    cm, cv, marg = conditional_mark_component(s, state.particles, reduced=kernel.reduced)
    wts = state.deltas * marg
    total = wts.sum()
    if not total > 0 or not np.isfinite(total):
        raise LocationOutsideSupport(f"no particle has location mass at s={tuple(s)}")
    wts = wts / total
    y = np.log(g - MARK_OFFSET)
    sd = np.sqrt(cv)
    chunk = max(1, 4_000_000 // len(g))
    dens = np.zeros(len(g))
    for i in range(0, len(wts), chunk):
        z = (y[None, :] - cm[i:i + chunk, None]) / sd[i:i + chunk, None]
        comp = np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * sd[i:i + chunk, None])
        dens += wts[i:i + chunk] @ comp
    dens /= g - MARK_OFFSET
    return dens / np.sum(dens * trapezoid_weights(g))


def nrd0_bandwidth(x) -> float:
    """Silverman's rule of thumb ``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    lo = min(sd, (q75 - q25) / 1.34) or sd or abs(x[0]) or 1.0
    return 0.9 * lo * len(x) ** -0.2


def neighbours(data: Dataset, s, radius):
    if radius <= 0:
        raise ValueError("radius must be positive")
    loc = data.values[:, :2]
    return np.linalg.norm(loc - np.asarray(s, dtype=float), axis=1) <= radius


def empirical_mark_density(data: Dataset, s, radius=30.0, bandwidth=None, mark_grid=None) -> np.ndarray:
    """Gaussian KDE of the marks of observations within ``radius`` of ``s``,
    normalized over ``mark_grid``."""
    g = _check_mark_grid(mark_grid)
    near = neighbours(data, s, radius)
    marks = data.values[near, 2]
    if len(marks) == 0:
        raise ValueError(f"no observations within {radius} of {tuple(s)}")
    h = nrd0_bandwidth(marks) if bandwidth is None else float(bandwidth)
    z = (g[:, None] - marks[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1)
    total = np.sum(dens * trapezoid_weights(g))
    if total <= 0:
        # every kernel bump fell outside the grid: put the mass at the nearest node
        dens = np.zeros_like(g)
        dens[np.argmin(np.abs(g - marks.mean()))] = 1.0
        total = np.sum(dens * trapezoid_weights(g))
    return dens / total
