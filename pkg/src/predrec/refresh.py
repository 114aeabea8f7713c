"""Attrition handling: re-draw the particle cloud from a Student-t fitted to
the weighted moments of a first pass, then rerun over the same data."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .core import Dataset, DegeneracyError, WeightSchedule
from .particles import DEFAULT_MIN_ESS, ParticleSet, ess, init_particles, run_prticle
from .sampling import REFRESH_STREAM, rng_stream, sample_mvt


class RefreshError(DegeneracyError):
    """A refresh pass degenerated; ``diagnostics`` holds what was computed."""

    def __init__(self, message, diagnostics, step=None):
        super().__init__(message, step=step)
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class MomentSummary:
    mean: np.ndarray
    covariance: np.ndarray
    source_ess: float


def weighted_moments(state: ParticleSet, kernel=None, min_ess=DEFAULT_MIN_ESS) -> MomentSummary:
    """Weighted mean and covariance of the particles.

    With a kernel, moments are taken over its free coordinates in the
    unconstrained parametrization (log-variances, raw correlations, ...).
    """
    e = ess(state)
    if min_ess is not None and e < min_ess:
        raise DegeneracyError(f"effective sample size {e:.3g} below {min_ess}; moments meaningless")
    Z = state.particles if kernel is None else kernel.to_unconstrained(state.particles)
    d = state.deltas
    T = state.T
    mean = d @ Z / T
    r = Z - mean
    cov = (r * d[:, None]).T @ r / T
    cov = 0.5 * (cov + cov.T)
    return MomentSummary(mean, cov, e)


class StudentTSampler:
    """Multivariate Student-t over the unconstrained free coordinates, mapped
    back through the kernel and rejection-filtered to its valid region."""

    def __init__(self, location, scale, df, kernel=None, template=None):
        self.location = np.asarray(location, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.df = float(df)
        self.kernel = kernel
        self.template = template
        self.dim = len(self.location) if kernel is None else kernel.dim_u
        self._dist = stats.multivariate_t(self.location, self.scale, df=self.df)

    def _to_natural(self, Z):
        if self.kernel is None:
            return Z
        return self.kernel.from_unconstrained(Z, self.template)

    def sample(self, size, rng, budget_factor=100):
        out = []
        have, drawn = 0, 0
        budget = budget_factor * size
        while have < size:
            if drawn >= budget:
                raise RuntimeError(f"rejection budget of {budget} draws exhausted")
            m = min(max(size - have, 16), budget - drawn)
            Z = np.atleast_2d(sample_mvt(self.location, self.scale, self.df, rng, m))
            drawn += m
            U = self._to_natural(Z)
            if self.kernel is not None:
                U = U[self.kernel.is_valid(U)]
            out.append(U)
            have += len(U)
        return np.concatenate(out)[:size]

    def pdf(self, points):
        """Density in the unconstrained coordinates (positive everywhere)."""
        Z = points if self.kernel is None else self.kernel.to_unconstrained(np.atleast_2d(points))
        return np.atleast_1d(self._dist.pdf(Z))


def refresh_sampler(moments: MomentSummary, df=5.0, inflate=1.5, kernel=None, template=None):
    """Student-t with location ``mean`` and covariance ``inflate * covariance``."""
    if df <= 2:
        raise ValueError("df must exceed 2 for a finite covariance")
    if inflate < 1:
        raise ValueError("inflate must be at least 1")
    if not (np.all(np.isfinite(moments.mean)) and np.all(np.isfinite(moments.covariance))):
        raise ValueError("non-finite moments")
    scale = inflate * moments.covariance * (df - 2.0) / df
    d = len(scale)
    try:
        np.linalg.cholesky(scale)
        ok = np.min(np.linalg.eigvalsh(scale)) > 0
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        jitter = 1e-8 * max(np.trace(scale), 1e-300) / d
        scale = scale + jitter * np.eye(d)
    return StudentTSampler(moments.mean, scale, df, kernel, template)


@dataclass(eq=False)
class RefreshDiagnostics:
    ess_per_pass: list
    T: int
    mean: np.ndarray
    covariance: np.ndarray
    df: float
    inflate: float
    seed: int
    pass1: ParticleSet | None = field(default=None, repr=False)

    @property
    def ess_pass1(self):
        return self.ess_per_pass[0]

    @property
    def ess_pass2(self):
        return self.ess_per_pass[-1] if len(self.ess_per_pass) > 1 else None

    def as_dict(self) -> dict:
        return {
            "ess_pass1": self.ess_pass1,
            "ess_pass2": self.ess_pass2,
            "ess_per_pass": list(self.ess_per_pass),
            "T": self.T,
            "mean": np.asarray(self.mean).tolist(),
            "covariance": np.asarray(self.covariance).ravel().tolist(),
            "df": self.df,
            "inflate": self.inflate,
            "seed": self.seed,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")


def run_with_refresh(data: Dataset, initial_sampler, T: int,
                     schedule: WeightSchedule = WeightSchedule(), kernel=None,
                     df=5.0, inflate=1.5, seed=0, rounds=1, T_refresh=None,
                     min_ess=DEFAULT_MIN_ESS, coord_names=()):
    """First pass from ``initial_sampler``; then ``rounds`` passes, each from a
    Student-t fitted to the previous pass.  Returns the last pass and its
    :class:`RefreshDiagnostics`."""
    T_refresh = T if T_refresh is None else T_refresh
    names = coord_names or getattr(kernel, "coord_names", ())
    diag = RefreshDiagnostics([], T, np.array([]), np.array([[]]), float(df), float(inflate), seed)
    start = init_particles(initial_sampler, T, seed, names)
    try:
        state, _ = run_prticle(data, start, schedule, kernel, min_ess=min_ess)
    except DegeneracyError as err:
        raise RefreshError(f"pass 1 degenerated: {err}", diag, err.step) from err
    diag.pass1 = state
    diag.ess_per_pass.append(ess(state))
    for r in range(1, rounds + 1):
        moments = weighted_moments(state, kernel, min_ess=min_ess)
        diag.mean, diag.covariance = moments.mean, moments.covariance
        template = state.particles[0]
        sampler = refresh_sampler(moments, df, inflate, kernel, template)
        rng = rng_stream(seed, REFRESH_STREAM * 100 + r)
        U = sampler.sample(T_refresh, rng)
        fresh = ParticleSet(U, np.ones(T_refresh), coord_names=tuple(names))
        try:
            state, _ = run_prticle(data, fresh, schedule, kernel, min_ess=min_ess)
        except DegeneracyError as err:
            raise RefreshError(f"refresh pass {r + 1} failed: {err}", diag, err.step) from err
        diag.ess_per_pass.append(ess(state))
    return state, diag
