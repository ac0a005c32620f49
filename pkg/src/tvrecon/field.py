"""Dense orientation field from sparse samples: splatting, box smoothing, divergence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .grid import GridFrame, InputError, ScalarGrid, VectorGrid

SMOOTH_PASSES = 3


class PointSample(NamedTuple):
    p: tuple[float, float, float]
    v: tuple[float, float, float]


@dataclass
class PointCloud:
    """Sample positions and their (weak, outward) orientation vectors."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.points.shape != self.normals.shape:
            raise InputError(
                f"{len(self.points)} positions but {len(self.normals)} orientation vectors"
            )
        if not np.all(np.isfinite(self.normals)):
            raise InputError("orientation vectors must be finite")

    @classmethod
    def from_samples(cls, samples) -> "PointCloud":
        samples = list(samples)
        if not samples:
            return cls(np.empty((0, 3)), np.empty((0, 3)))
        return cls(np.array([s.p for s in samples]), np.array([s.v for s in samples]))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[PointSample]:
        for p, v in zip(self.points, self.normals):
            yield PointSample(tuple(p), tuple(v))

    def __add__(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(
            np.concatenate([self.points, other.points]),
            np.concatenate([self.normals, other.normals]),
        )

    def flipped(self) -> "PointCloud":
        return PointCloud(self.points.copy(), -self.normals)


def cell_coordinates(frame: GridFrame, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower cell corner and fractional offset (grid units) for every point.

    Points on the upper face of the volume are assigned to the last cell with
    offset 1. Raises :class:`InputError` naming the first point outside.
    """
    g = frame.to_grid(points)
    n = np.asarray(frame.dims.as_tuple())
    tol = 1e-9
    bad = np.any((g < -tol) | (g > n - 1 + tol), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise InputError(f"sample {i} at {tuple(np.asarray(points)[i])} lies outside the grid")
    g = np.clip(g, 0.0, n - 1)
    base = np.minimum(np.floor(g).astype(np.int64), n - 2)
    return base, g - base


def _corner_weights(frac: np.ndarray):
    """Yield ``(dx, dy, dz, weight)`` for the 8 corners of each point's cell."""
    for dz in (0, 1):
        wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dx in (0, 1):
                wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
                yield dx, dy, dz, wx * wy * wz


def splat(cloud: PointCloud, frame: GridFrame) -> VectorGrid:
    """Distribute each sample's vector over its cell's 8 vertices with trilinear weights."""
    base, frac = cell_coordinates(frame, cloud.points)
    nx, ny, _ = frame.dims.as_tuple()
    out = VectorGrid.zeros(frame)
    for dx, dy, dz, w in _corner_weights(frac):
        flat = (base[:, 0] + dx) + nx * ((base[:, 1] + dy) + ny * (base[:, 2] + dz))
        for c in range(3):
            # np.add.at accumulates in sample order: deterministic
            np.add.at(out.comp[c], flat, w * cloud.normals[:, c])
    return out


def trilinear_sample(grid: ScalarGrid, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a scalar grid at world positions."""
    base, frac = cell_coordinates(grid.frame, points)
    nx, ny, _ = grid.frame.dims.as_tuple()
    out = np.zeros(len(base))
    for dx, dy, dz, w in _corner_weights(frac):
        flat = (base[:, 0] + dx) + nx * ((base[:, 1] + dy) + ny * (base[:, 2] + dz))
        out += w * grid.data[flat]
    return out


def box_filter(array: np.ndarray, passes: int = SMOOTH_PASSES) -> np.ndarray:
    """Separable (1/3, 1/3, 1/3) box filter applied ``passes`` times per axis.

    Values beyond the array are treated as zero.
    """
    out = np.asarray(array, dtype=np.float64).copy()
    for axis in range(out.ndim):
        for _ in range(passes):
            padded = np.pad(out, [(1, 1) if a == axis else (0, 0) for a in range(out.ndim)])
            lo = np.take(padded, np.arange(0, out.shape[axis]), axis=axis)
            mid = np.take(padded, np.arange(1, out.shape[axis] + 1), axis=axis)
            hi = np.take(padded, np.arange(2, out.shape[axis] + 2), axis=axis)
            out = (lo + mid + hi) / 3.0
    return out


def zero_border(array: np.ndarray, width: int) -> np.ndarray:
    out = array.copy()
    for axis in range(out.ndim):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(0, width)
        out[tuple(sl)] = 0.0
        sl[axis] = slice(out.shape[axis] - width, None)
        out[tuple(sl)] = 0.0
    return out


def box_smooth(field: VectorGrid, n: int = SMOOTH_PASSES) -> VectorGrid:
    """Smooth each component with ``n`` box passes per axis.

    The two outermost vertex layers are zeroed afterwards so the field has
    compact support and central differences never need values outside.
    """
    if n < 1:
        raise ValueError(f"smoothing passes must be >= 1, got {n}")
    comps = tuple(zero_border(box_filter(a, n), 2).ravel() for a in field.arrays())
    return VectorGrid(field.frame, comps)


def divergence(field: VectorGrid) -> ScalarGrid:
    """Central-difference divergence in world units; zero on boundary vertices."""
    h = field.frame.h
    v1, v2, v3 = field.arrays()
    div = np.zeros(field.frame.dims.shape)
    inner = (slice(1, -1), slice(1, -1), slice(1, -1))
    # storage order is (z, y, x)
    div[inner] = (
        (v1[1:-1, 1:-1, 2:] - v1[1:-1, 1:-1, :-2])
        + (v2[1:-1, 2:, 1:-1] - v2[1:-1, :-2, 1:-1])
        + (v3[2:, 1:-1, 1:-1] - v3[:-2, 1:-1, 1:-1])
    ) / (2.0 * h)
    return ScalarGrid.from_array(field.frame, div)


def to_density(field: VectorGrid) -> VectorGrid:
    """Rescale a splatted field to world units.

    Each sample stands for one cell face of surface (area ``h**2``) spread
    over one cell volume (``h**3``), so vectors are divided by ``h``. This
    fixes the scale on which the smoothness weight ``lam`` acts; other
    conventions only shift the useful range of ``lam``.
    """
    h = field.frame.h
    return VectorGrid(field.frame, tuple(c / h for c in field.comp))


def divergence_field(cloud: PointCloud, frame: GridFrame, passes: int = SMOOTH_PASSES) -> ScalarGrid:
    """splat -> box_smooth -> to_density -> divergence."""
    return divergence(to_density(box_smooth(splat(cloud, frame), passes)))
