"""Particle approximation of predictive recursion.

A fixed cloud ``U_1..U_T`` drawn from the initial guess carries multiplicative
weights ``delta_t``.  Absorbing observation ``x`` with step size ``w``::

    D        = mean_t k(x | U_t) * delta_t          (normalizing constant)
    delta_t <- delta_t * (1 + w * (k(x | U_t) / D - 1))

Because ``mean_t k_t delta_t = D`` the update leaves ``mean(delta)`` unchanged,
so weights started at one keep mean one for the whole run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, DegeneracyError, WeightSchedule, permute_dataset, weight_at
from .kernels import DENSITY_FLOOR
from .quadrature import write_table
from .sampling import PARTICLE_STREAM, rng_stream

MIN_NORMALIZER = 1e-300
DEFAULT_MIN_ESS = 3.0
MEAN_TOL = 1e-9


class InvariantError(AssertionError):
    """The mean-one or positivity property of the weights was violated."""


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Mixing-space particles with their filter weights.

    Attributes
    ----------
    particles : ndarray, shape (T, p)
        Draws from the initial guess.
    deltas : ndarray, shape (T,)
        Positive weights with mean one.
    step_count : int
        Number of observations absorbed; the next step uses ``w_{step_count+1}``.
    p0_density : ndarray or None
        Initial-guess density at the particles, when known.
    density : ndarray or None
        Running density ``p_i(U_t)`` (only tracked when ``p0_density`` is set).
    """

    particles: np.ndarray
    deltas: np.ndarray
    step_count: int = 0
    p0_density: np.ndarray | None = field(default=None, repr=False)
    density: np.ndarray | None = field(default=None, repr=False)
    coord_names: tuple = ()

    def __post_init__(self):
        particles = np.array(self.particles, dtype=float)
        if particles.ndim == 1:
            particles = particles[:, None]
        deltas = np.array(self.deltas, dtype=float)
        if len(particles) < 1:
            raise ValueError("need at least one particle")
        if deltas.shape != (len(particles),):
            raise ValueError("one weight per particle")
        if np.any(deltas <= 0):
            raise ValueError("particle weights must be positive")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "deltas", deltas)

    @property
    def T(self) -> int:
        return len(self.deltas)

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def reset(self) -> "ParticleSet":
        """Same particles, unit weights, no steps absorbed."""
        return replace(self, deltas=np.ones(self.T), step_count=0,
                       density=None if self.p0_density is None else self.p0_density.copy())

    def weighted_mean(self) -> np.ndarray:
        return self.deltas @ self.particles / self.T

    def weighted_cov(self) -> np.ndarray:
        d = self.particles - self.weighted_mean()
        return (d * self.deltas[:, None]).T @ d / self.T

    def summary(self) -> dict:
        return {
            "T": self.T,
            "step_count": self.step_count,
            "ess": ess(self),
            "mean": self.weighted_mean().tolist(),
            "covariance": self.weighted_cov().ravel().tolist(),
        }

    def to_csv(self, path) -> None:
        names = list(self.coord_names) or [f"u{j + 1}" for j in range(self.dim)]
        write_table(path, names + ["delta"], np.column_stack([self.particles, self.deltas]))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path, step_count=0) -> "ParticleSet":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        names = raw.dtype.names
        cols = np.column_stack([raw[n] for n in names]).reshape(-1, len(names))
        return cls(cols[:, :-1], cols[:, -1], step_count, coord_names=tuple(names[:-1]))


def ess(state) -> float:
    """``(sum delta)^2 / sum delta^2``; accepts a ParticleSet or a weight array."""
    d = np.asarray(getattr(state, "deltas", state), dtype=float)
    return float(np.sum(d) ** 2 / np.sum(d * d))


def init_particles(sampler, T: int, seed: int, coord_names=(), track_density=False) -> ParticleSet:
    """``T`` iid draws from ``sampler`` with unit weights."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = rng_stream(seed, PARTICLE_STREAM)
    U = np.asarray(sampler.sample(T, rng), dtype=float).reshape(T, -1)
    p0 = None
    if track_density:
        p0 = np.asarray(sampler.pdf(U), dtype=float)
    return ParticleSet(U, np.ones(T), 0, p0, None if p0 is None else p0.copy(),
                       coord_names=tuple(coord_names))


def _update(deltas, kvals, w, step, density=None):
    D = float(np.mean(kvals * deltas))
    # with kernel values floored, a cloud that misses x entirely shows up as all-floor values
    if not D >= MIN_NORMALIZER or np.max(kvals) <= DENSITY_FLOOR:
        raise DegeneracyError(
            f"Monte Carlo normalizing constant {D:.3g} underflowed at step {step}; "
            "the particle cloud misses the data (refresh needed)", step=step)
    ratio = kvals / D
    if density is not None:
        density = (1.0 - w) * density + w * ratio * density
    return deltas * (1.0 + w * (ratio - 1.0)), D, density


def _check(deltas, step):
    mean = float(np.mean(deltas))
    if abs(mean - 1.0) > MEAN_TOL:
        raise InvariantError(f"mean weight {mean!r} drifted from 1 at step {step}")
    if not np.all(deltas > 0):
        raise InvariantError(f"non-positive weight at step {step}")


def prticle_step(state: ParticleSet, x, w: float, kernel):
    """Absorb one observation; returns ``(new_state, m_hat)``."""
    if not 0.0 < w < 1.0:
        raise ValueError("step weight must lie in (0, 1)")
    kvals = kernel(np.asarray(x, dtype=float), state.particles)
    step = state.step_count + 1
    deltas, D, density = _update(state.deltas, kvals, w, step, state.density)
    return replace(state, deltas=deltas, step_count=step, density=density), D


def run_prticle(data: Dataset, state: ParticleSet, schedule: WeightSchedule = WeightSchedule(),
                kernel=None, min_ess=DEFAULT_MIN_ESS, check_invariants=True, callback=None):
    """Absorb ``data`` in order, continuing from ``state.step_count``.

    Returns the final particle set and the ``n`` Monte Carlo normalizing
    constants.  Raises :class:`DegeneracyError` when a normalizing constant
    underflows or, for clouds larger than ``min_ess``, when the effective
    sample size drops below ``min_ess``.  ``callback(step, deltas, m_hat)``
    is called after every step.
    """
    if data.n and data.dim != kernel.dim_x:
        raise ValueError("data dimension does not match the kernel")
    prepared = kernel.prepare(state.particles)
    deltas, density = state.deltas, state.density
    T = state.T
    start = state.step_count
    m_hats = np.empty(data.n)
    for i, x in enumerate(data.values):
        step = start + i + 1
        kvals = kernel.evaluate(x, prepared)
        deltas, m_hats[i], density = _update(deltas, kvals, weight_at(step, schedule), step, density)
        if check_invariants:
            _check(deltas, step)
        if min_ess is not None and T > min_ess:
            e = ess(deltas)
            if e < min_ess:
                raise DegeneracyError(
                    f"effective sample size {e:.3g} fell below {min_ess} at step {step}",
                    step=step, ess=e)
        if callback is not None:
            callback(step, deltas, m_hats[i])
    return replace(state, deltas=deltas, step_count=start + data.n, density=density), m_hats


def permutation_average(data: Dataset, base_state: ParticleSet,
                        schedule: WeightSchedule = WeightSchedule(), kernel=None,
                        n_perms: int = 1, seed: int = 0, **run_kw) -> ParticleSet:
    """Average the weights of runs over ``n_perms`` random orderings.

    Every run starts from ``base_state`` with unit weights; permutation ``k``
    is ``permute_dataset(data, seed + k)``.
    """
    if n_perms < 1:
        raise ValueError("n_perms must be at least 1")
    start = base_state.reset()
    total = np.zeros(start.T)
    last = None
    for k in range(n_perms):
        perm = permute_dataset(data, seed + k)
        try:
            last, _ = run_prticle(perm, start, schedule, kernel, **run_kw)
        except DegeneracyError as err:
            raise DegeneracyError(f"permutation {k}: {err}", step=err.step,
                                  permutation=k, **err.context) from err
        total += last.deltas
    if n_perms == 1:
        return last
    return replace(last, deltas=total / n_perms, density=None)
