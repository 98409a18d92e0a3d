"""Uniform rectilinear grids over named phonon coordinates.

All multi-dimensional arrays in the package use row-major (C) order with
the last axis varying fastest, matching ``numpy.ravel``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class GridError(ValueError):
    """Raised for invalid grid definitions."""


@dataclass(frozen=True)
class AxisSpec:
    """One evenly spaced coordinate axis.

    Parameters
    ----------
    name : str
        Axis label, e.g. ``"q_y"`` or ``"Q"``.
    count : int
        Number of nodes, at least 2.
    min, max : float
        End points in sqrt(amu)*Angstrom. Both are nodes.
    """

    name: str
    count: int
    min: float
    max: float

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise GridError(f"axis name must be non-empty without whitespace, got {self.name!r}")
        if int(self.count) != self.count or self.count < 2:
            raise GridError(f"axis {self.name}: count must be an integer >= 2, got {self.count}")
        if not (np.isfinite(self.min) and np.isfinite(self.max)):
            raise GridError(f"axis {self.name}: non-finite extent")
        if not self.max > self.min:
            raise GridError(f"axis {self.name}: non-positive extent [{self.min}, {self.max}]")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "min", float(self.min))
        object.__setattr__(self, "max", float(self.max))

    @property
    def spacing(self) -> float:
        return (self.max - self.min) / (self.count - 1)

    @property
    def length(self) -> float:
        return self.max - self.min

    def points(self) -> np.ndarray:
        # The lower half counts up from min and the upper half down from max,
        # each by the correctly rounded ratio i/(n-1). Refined grids then
        # reproduce every parent node bit-for-bit, and an axis with
        # min == -max is exactly antisymmetric under node reflection.
        n = self.count
        i = np.arange(n)
        upper = 2 * i > n - 1
        length = self.max - self.min
        x = self.min + length * (i / (n - 1))
        x[upper] = self.max - length * ((n - 1 - i[upper]) / (n - 1))
        return x


@dataclass(frozen=True)
class GridSpec:
    """Ordered collection of axes defining a tensor-product grid."""

    axes: tuple[AxisSpec, ...]

    def __post_init__(self):
        axes = tuple(self.axes)
        if not axes:
            raise GridError("grid needs at least one axis")
        names = [a.name for a in axes]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise GridError(f"duplicate axis names: {dupes}")
        object.__setattr__(self, "axes", axes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axis(self, name: str) -> AxisSpec:
        return self.axes[self.axis_index(name)]

    def axis_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GridError(f"grid has no axis {name!r} (axes: {self.names})") from None

    def points(self) -> list[np.ndarray]:
        return [a.points() for a in self.axes]

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays broadcast to the full grid shape (``ij`` indexing)."""
        return np.meshgrid(*self.points(), indexing="ij")

    def index_of(self, multi_index: Sequence[int]) -> int:
        """Flat row-major index of a multi-index."""
        if len(multi_index) != self.ndim:
            raise GridError(f"expected {self.ndim} indices, got {len(multi_index)}")
        for i, n in zip(multi_index, self.shape):
            if not 0 <= i < n:
                raise GridError(f"index {tuple(multi_index)} out of range for shape {self.shape}")
        return int(np.ravel_multi_index(tuple(multi_index), self.shape))

    def multi_index_of(self, flat: int) -> tuple[int, ...]:
        if not 0 <= flat < self.size:
            raise GridError(f"flat index {flat} out of range for size {self.size}")
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def subgrid(self, names: Sequence[str]) -> GridSpec:
        """Grid over a subset of the axes, kept in this grid's order."""
        keep = set(names)
        unknown = keep - set(self.names)
        if unknown:
            raise GridError(f"unknown axes {sorted(unknown)}")
        return GridSpec(tuple(a for a in self.axes if a.name in keep))

    def contains(self, other: GridSpec, rtol: float = 1e-12) -> bool:
        """True if every axis of ``other`` exists here and lies within our extent."""
        for ax in other.axes:
            if ax.name not in self.names:
                return False
            mine = self.axis(ax.name)
            slack = rtol * max(abs(mine.min), abs(mine.max), mine.length)
            if ax.min < mine.min - slack or ax.max > mine.max + slack:
                return False
        return True


def build_grid(axes: Sequence[AxisSpec]) -> GridSpec:
    """Build a grid from axis specs; the last axis varies fastest."""
    return GridSpec(tuple(axes))


def refine_grid(sample: GridSpec, factor: int | Sequence[int]) -> GridSpec:
    """Subdivide every sample interval into ``factor`` solve intervals.

    The returned grid has the same end points per axis and contains every
    node of ``sample``; ``count' = factor * (count - 1) + 1``.
    """
    if np.isscalar(factor):
        factors = [factor] * sample.ndim
    else:
        factors = list(factor)
    if len(factors) != sample.ndim:
        raise GridError(f"need {sample.ndim} refine factors, got {len(factors)}")
    axes = []
    for ax, f in zip(sample.axes, factors):
        if int(f) != f or f < 1:
            raise GridError(f"refine factor for {ax.name} must be a positive integer, got {f}")
        f = int(f)
        axes.append(AxisSpec(ax.name, f * (ax.count - 1) + 1, ax.min, ax.max))
    return GridSpec(tuple(axes))
