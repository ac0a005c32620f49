"""Uniform vertex grids, world/grid coordinate mapping and the coarse-to-fine pyramid.

Scalar data is stored as one flat C-contiguous array whose flat index is
``x + nx * (y + ny * z)``; :attr:`ScalarGrid.array` exposes the same memory
reshaped to ``(nz, ny, nx)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InputError(ValueError):
    """Raised for malformed user input (point lists, files, samples)."""


class ConfigurationError(ValueError):
    """Raised for parameter combinations that cannot be honoured."""


@dataclass(frozen=True)
class GridDims:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for n in (self.nx, self.ny, self.nz):
            if int(n) != n or n < 2:
                raise ConfigurationError(f"grid dims must be integers >= 2, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape in storage order ``(nz, ny, nx)``."""
        return (self.nz, self.ny, self.nx)

    @property
    def offsets(self) -> tuple[int, int, int]:
        """Flat-index strides for a unit step along x, y, z."""
        return (1, self.nx, self.nx * self.ny)


@dataclass(frozen=True)
class GridFrame:
    origin: tuple[float, float, float]
    h: float
    dims: GridDims

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigurationError(f"grid spacing must be positive, got {self.h}")

    @property
    def upper(self) -> np.ndarray:
        """World coordinates of the last vertex."""
        return np.asarray(self.origin) + self.h * (np.asarray(self.dims.as_tuple()) - 1)

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        """World coordinates -> continuous grid coordinates (spacing 1)."""
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.h

    def to_world(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + self.h * np.asarray(coords, dtype=float)

    def vertex_positions(self) -> np.ndarray:
        """World position of every vertex, in flat order, shape ``(N, 3)``."""
        nx, ny, nz = self.dims.as_tuple()
        z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        coords = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
        return self.to_world(coords)


@dataclass
class ScalarGrid:
    frame: GridFrame
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        if self.data.size != self.frame.dims.size:
            raise ConfigurationError(
                f"data length {self.data.size} does not match grid size {self.frame.dims.size}"
            )

    @classmethod
    def zeros(cls, frame: GridFrame) -> "ScalarGrid":
        return cls(frame, np.zeros(frame.dims.size))

    @classmethod
    def full(cls, frame: GridFrame, value: float) -> "ScalarGrid":
        return cls(frame, np.full(frame.dims.size, float(value)))

    @classmethod
    def from_array(cls, frame: GridFrame, array: np.ndarray) -> "ScalarGrid":
        array = np.array(array, dtype=np.float64)  # copy: never alias the caller's buffer
        if array.shape != frame.dims.shape:
            raise ConfigurationError(f"array shape {array.shape} != {frame.dims.shape}")
        return cls(frame, array.ravel())

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.frame.dims.shape)

    def copy(self) -> "ScalarGrid":
        return ScalarGrid(self.frame, self.data.copy())


@dataclass
class VectorGrid:
    frame: GridFrame
    comp: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        comps = tuple(np.ascontiguousarray(c, dtype=np.float64).ravel() for c in self.comp)
        if len(comps) != 3 or any(c.size != self.frame.dims.size for c in comps):
            raise ConfigurationError("vector grid needs three components of grid size")
        self.comp = comps

    @classmethod
    def zeros(cls, frame: GridFrame) -> "VectorGrid":
        n = frame.dims.size
        return cls(frame, (np.zeros(n), np.zeros(n), np.zeros(n)))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        shape = self.frame.dims.shape
        return tuple(c.reshape(shape) for c in self.comp)

    def __neg__(self) -> "VectorGrid":
        return VectorGrid(self.frame, tuple(-c for c in self.comp))

    def __add__(self, other: "VectorGrid") -> "VectorGrid":
        if other.frame != self.frame:
            raise ConfigurationError("cannot add vector grids on different frames")
        return VectorGrid(self.frame, tuple(a + b for a, b in zip(self.comp, other.comp)))


@dataclass
class Pyramid:
    levels: list[GridFrame] = field(default_factory=list)

    @property
    def finest(self) -> GridFrame:
        return self.levels[-1]

    @property
    def coarsest(self) -> GridFrame:
        return self.levels[0]

    def __len__(self) -> int:
        return len(self.levels)


def index(frame: GridFrame, x: int, y: int, z: int) -> int:
    nx, ny, nz = frame.dims.as_tuple()
    assert 0 <= x < nx and 0 <= y < ny and 0 <= z < nz, (x, y, z)
    return x + nx * (y + ny * z)


def unindex(frame: GridFrame, i: int) -> tuple[int, int, int]:
    nx, ny, _ = frame.dims.as_tuple()
    assert 0 <= i < frame.dims.size, i
    x = i % nx
    y = (i // nx) % ny
    z = i // (nx * ny)
    return x, y, z


def build_frame(
    points: Sequence | np.ndarray,
    target_max_dim: int,
    padding_fraction: float = 0.05,
) -> GridFrame:
    """Fit a cubical-cell grid around a point set.

    The longest padded axis gets exactly ``target_max_dim`` vertices; the
    remaining axes are sized to cover their padded extent, rounded up. An
    axis with zero extent is widened to two cells centred on the points.

    Parameters
    ----------
    points : array_like, shape (N, 3)
        World positions (``PointSample`` lists are accepted as well).
    target_max_dim : int
        Vertex count along the longest axis, at least 2.
    padding_fraction : float
        Margin added on both sides of each axis, as a fraction of that
        axis' extent.
    """
    pts = _positions(points)
    if len(pts) == 0:
        raise InputError("cannot build a grid frame from an empty point list")
    if target_max_dim < 2:
        raise ConfigurationError(f"target_max_dim must be >= 2, got {target_max_dim}")
    if padding_fraction < 0:
        raise ConfigurationError(f"padding_fraction must be >= 0, got {padding_fraction}")

    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = hi - lo
    lo = lo - padding_fraction * extent
    hi = hi + padding_fraction * extent
    padded = hi - lo

    longest = float(padded.max())
    h = longest / (target_max_dim - 1) if longest > 0 else 1.0

    origin = lo.copy()
    dims = []
    for axis in range(3):
        if padded[axis] <= 0:
            origin[axis] = lo[axis] - h
            dims.append(3)
            continue
        # tolerance keeps exact multiples (e.g. 1 / (2/60) = 30) from rounding up
        cells = math.ceil(padded[axis] / h - 1e-9)
        dims.append(max(cells + 1, 2))
    return GridFrame(tuple(float(o) for o in origin), float(h), GridDims(*dims))


def pyramid_compatible(n: int, levels: int) -> int:
    """Smallest ``m >= n`` with ``(m - 1)`` divisible by ``2**(levels - 1)``."""
    step = 1 << (levels - 1)
    return 1 + step * math.ceil((n - 1) / step)


def coarsen_dims(dims: GridDims) -> GridDims:
    return GridDims(*((n - 1) // 2 + 1 for n in dims.as_tuple()))


def build_pyramid(finest: GridFrame, levels: int) -> Pyramid:
    """Vertex-centred pyramid, coarsest level first.

    Dims of ``finest`` are padded up (on the high side, origin kept) until
    every axis survives ``levels - 1`` halvings.
    """
    if levels < 1:
        raise ConfigurationError(f"levels must be >= 1, got {levels}")
    step = 1 << (levels - 1)
    if step > max(finest.dims.as_tuple()) - 1:
        raise ConfigurationError(
            f"{levels} levels need at least {step + 1} vertices on the longest axis, "
            f"grid is {finest.dims.as_tuple()}"
        )
    dims = GridDims(*(pyramid_compatible(n, levels) for n in finest.dims.as_tuple()))
    frames = [GridFrame(finest.origin, finest.h, dims)]
    for _ in range(levels - 1):
        prev = frames[-1]
        frames.append(GridFrame(prev.origin, prev.h * 2.0, coarsen_dims(prev.dims)))
    return Pyramid(frames[::-1])


def _positions(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return np.asarray(points, dtype=float).reshape(-1, 3)
    pts = [getattr(p, "p", p) for p in points]
    return np.asarray(pts, dtype=float).reshape(-1, 3)
