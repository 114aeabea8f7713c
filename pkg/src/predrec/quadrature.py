"""Predictive recursion on a fixed quadrature grid over the mixing space.

Feasible for one- or two-dimensional mixing supports (and directions on the
sphere).  Used as the exact reference for the particle engine.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, DegeneracyError, WeightSchedule, weight_at
from .kernels import DENSITY_FLOOR

MIN_NORMALIZER = 1e-300


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Density values on a grid with quadrature (cell) weights.

    ``points`` is ``(G, p)``; ``integral()`` is ``sum(values * cell_weights)``.
    ``axes`` keeps the per-dimension nodes of tensor grids.
    """

    points: np.ndarray
    cell_weights: np.ndarray
    values: np.ndarray
    axes: tuple = field(default=(), repr=False)
    coord_names: tuple = ()

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def integral(self) -> float:
        return float(np.sum(self.values * self.cell_weights))

    def with_values(self, values) -> "GridDensity":
        return replace(self, values=np.asarray(values, dtype=float))

    def to_csv(self, path) -> None:
        names = list(self.coord_names) or [f"u{j + 1}" for j in range(self.dim)]
        write_table(path, names + ["density"], np.column_stack([self.points, self.values]))


def write_table(path, header, rows) -> None:
    """CSV with full-precision floats; byte-stable for identical inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def trapezoid_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def make_grid(bounds, resolution=None) -> GridDensity:
    """Uniform density on a tensor-product trapezoid grid (dimension <= 2)."""
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    d = len(bounds)
    if d > 2:
        raise ValueError("quadrature grids are limited to dimension <= 2")
    if np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError("each dimension needs lo < hi")
    if resolution is None:
        resolution = 400 if d == 1 else 100
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2 per dimension")
    axes = tuple(np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, res))
    wts = [trapezoid_weights(a) for a in axes]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    cell = np.ones(1)
    for w in wts:
        cell = np.multiply.outer(cell, w)
    cell = cell.ravel()
    volume = float(np.prod(bounds[:, 1] - bounds[:, 0]))
    values = np.full(len(points), 1.0 / volume)
    return GridDensity(points, cell, values, axes)


def make_sphere_grid(n_theta=90, n_phi=180) -> GridDensity:
    """Uniform density on a latitude-longitude mesh of the unit sphere.

    Nodes sit at cell centres; weights are exact cell areas (total 4 pi).
    """
    edges = np.linspace(0.0, np.pi, n_theta + 1)
    theta = 0.5 * (edges[:-1] + edges[1:])
    phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
    band = np.cos(edges[:-1]) - np.cos(edges[1:])
    T, P = np.meshgrid(theta, phi, indexing="ij")
    points = np.column_stack([
        (np.sin(T) * np.cos(P)).ravel(),
        (np.sin(T) * np.sin(P)).ravel(),
        np.cos(T).ravel(),
    ])
    cell = np.multiply.outer(band, np.full(n_phi, 2 * np.pi / n_phi)).ravel()
    values = np.full(len(points), 1.0 / (4 * np.pi))
    return GridDensity(points, cell, values, (theta, phi), ("mu_x", "mu_y", "mu_z"))


def _step(values, cell, kvals, w, step=None):
    mass = values * cell
    m = float(np.sum(kvals * mass))
    if not m >= MIN_NORMALIZER or np.max(kvals) <= DENSITY_FLOOR:
        raise DegeneracyError(f"normalizing constant {m} below {MIN_NORMALIZER}", step=step)
    new = values * ((1.0 - w) + w * kvals / m)
    # trapezoid-exact in real arithmetic; the division absorbs rounding drift
    new /= np.sum(new * cell)
    return new, m


def pr_quadrature_step(state: GridDensity, x, w: float, kernel):
    """One recursion update; returns ``(new_state, m_value)``."""
    if not 0.0 < w < 1.0:
        raise ValueError("step weight must lie in (0, 1)")
    kvals = kernel(np.asarray(x, dtype=float), state.points)
    values, m = _step(state.values, state.cell_weights, kvals, w)
    return state.with_values(values), m


def run_pr_quadrature(data: Dataset, state: GridDensity,
                      schedule: WeightSchedule = WeightSchedule(), kernel=None):
    """Absorb every observation in order; returns ``(final_state, m_values)``."""
    if data.n and data.dim != kernel.dim_x:
        raise ValueError("data dimension does not match the kernel")
    prepared = kernel.prepare(state.points)
    values = state.values
    m_values = np.empty(data.n)
    for i, x in enumerate(data.values, start=1):
        kvals = kernel.evaluate(x, prepared)
        values, m_values[i - 1] = _step(values, state.cell_weights, kvals,
                                        weight_at(i, schedule), step=i)
    return state.with_values(values), m_values


def mixture_density_quadrature(x, state: GridDensity, kernel):
    """Mixture density ``sum_g k(x | u_g) p(u_g) c_g`` at one or many ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and x.size == kernel.dim_x
    X = x.reshape(-1, kernel.dim_x)
    mass = state.values * state.cell_weights
    if getattr(kernel, "family", None) == "gaussian-iso" and len(state.axes) == 2 == state.dim:
        out = _separable_mixture(X, state, kernel.sigma2, mass)
    else:
        out = kernel.mixture(X, state.points, mass)
    return float(out[0]) if single else out


def _separable_mixture(X, state, sigma2, mass):
    # isotropic Gaussian on a tensor grid factorizes over coordinates
    P = mass.reshape(state.shape)
    c = 1.0 / np.sqrt(2 * np.pi * sigma2)
    out = np.empty(len(X))
    rows = max(1, 2_000_000 // max(state.shape))
    a1, a2 = state.axes
    for i in range(0, len(X), rows):
        xs = X[i:i + rows]
        K1 = c * np.exp(-0.5 * (xs[:, 0:1] - a1[None, :]) ** 2 / sigma2)
        K2 = c * np.exp(-0.5 * (xs[:, 1:2] - a2[None, :]) ** 2 / sigma2)
        out[i:i + rows] = np.sum((K1 @ P) * K2, axis=1)
    return out


def sample_grid_mixture(state: GridDensity, kernel, n, rng):
    """Draws from the grid mixture: a node by its mass, then the kernel."""
    mass = np.clip(state.values * state.cell_weights, 0.0, None)
    idx = rng.choice(len(mass), size=n, p=mass / mass.sum())
    return kernel.simulate(state.points[idx], rng)
