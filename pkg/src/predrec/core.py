"""Shared domain types: the step-size schedule, observations and datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Side length of the square observation window for marked point data.
SPATIAL_EXTENT = 200.0
#: Lower truncation of the mark (tree diameter, cm).
MARK_OFFSET = 2.0

EUCLIDEAN = "euclidean"
SPHERE = "sphere"
MARKED = "marked"


class PRError(Exception):
    """Base class for errors raised by this package."""


class DataError(PRError, ValueError):
    """Invalid observation or dataset."""


class DegeneracyError(PRError, ArithmeticError):
    """A normalizing constant collapsed or the particle cloud lost its mass.

    ``step`` is the 1-based index of the observation being absorbed when the
    failure happened (counted from the start of the run).
    """

    def __init__(self, message: str, step: int | None = None, **context):
        super().__init__(message)
        self.step = step
        self.context = context


@dataclass(frozen=True)
class WeightSchedule:
    """Step sizes ``w_i = (i + 1) ** -gamma`` with ``gamma`` in (0.5, 1]."""

    gamma: float = 1.0

    def __post_init__(self):
        if not (0.5 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0.5, 1], got {self.gamma}")

    def weight_at(self, i: int) -> float:
        return weight_at(i, self)

    def weights(self, n: int, start: int = 1) -> np.ndarray:
        """Weights for steps ``start, ..., start + n - 1``."""
        if start < 1:
            raise ValueError("schedule index starts at 1")
        i = np.arange(start, start + n, dtype=float)
        return (i + 1.0) ** (-self.gamma)


def weight_at(i: int, schedule: WeightSchedule = WeightSchedule()) -> float:
    if i < 1:
        raise ValueError(f"weight index must be >= 1, got {i}")
    return float((i + 1.0) ** (-schedule.gamma))


@dataclass(frozen=True)
class MarkedPoint:
    """A tree: location ``(s1, s2)`` in the open window and a mark above 2."""

    s1: float
    s2: float
    mark: float

    def __post_init__(self):
        if not (0.0 < self.s1 < SPATIAL_EXTENT and 0.0 < self.s2 < SPATIAL_EXTENT):
            raise DataError(f"location ({self.s1}, {self.s2}) outside the open window")
        if not self.mark > MARK_OFFSET:
            raise DataError(f"mark {self.mark} must exceed {MARK_OFFSET}")

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.mark])


def _validate(values: np.ndarray, kind: str) -> None:
    if not np.all(np.isfinite(values)):
        raise DataError("observations must be finite")
    if kind == SPHERE:
        if values.shape[1] != 3:
            raise DataError("sphere observations are unit 3-vectors")
        norms = np.linalg.norm(values, axis=1)
        if values.size and np.max(np.abs(norms - 1.0)) > 1e-12:
            raise DataError("sphere observations must have unit norm (tol 1e-12)")
    elif kind == MARKED:
        if values.shape[1] != 3:
            raise DataError("marked observations are (s1, s2, mark) triples")
        s, mark = values[:, :2], values[:, 2]
        if np.any(s <= 0.0) or np.any(s >= SPATIAL_EXTENT):
            raise DataError("marked-point locations must lie strictly inside (0, 200)^2")
        if np.any(mark <= MARK_OFFSET):
            raise DataError("marks must be strictly greater than 2")
    elif kind != EUCLIDEAN:
        raise DataError(f"unknown observation kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered sample of observations of one kind and dimension.

    Rows of ``values`` are the observations in processing order; the order is
    significant because the recursion is order-dependent.
    """

    values: np.ndarray
    kind: str = EUCLIDEAN
    latents: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError("dataset values must be a 2-d array (n, dim)")
        _validate(values, self.kind)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_marked_points(cls, points: Iterable[MarkedPoint]) -> "Dataset":
        rows = [p.as_array() for p in points]
        return cls(np.array(rows).reshape(-1, 3), kind=MARKED)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def reorder(self, order: Sequence[int]) -> "Dataset":
        order = np.asarray(order, dtype=int)
        latents = None if self.latents is None else self.latents[order]
        return Dataset(self.values[order], self.kind, latents)

    def marked_points(self) -> list[MarkedPoint]:
        if self.kind != MARKED:
            raise DataError("not a marked-point dataset")
        return [MarkedPoint(*row) for row in self.values]


def permute_dataset(data: Dataset, seed: int) -> Dataset:
    """Uniformly random reordering of ``data``, reproducible from ``seed``."""
    from .sampling import rng_stream, PERMUTATION_STREAM

    rng = rng_stream(seed, PERMUTATION_STREAM)
    # Generator.permutation is a Fisher-Yates shuffle over the index vector
    order = rng.permutation(data.n)
    return data.reorder(order)
