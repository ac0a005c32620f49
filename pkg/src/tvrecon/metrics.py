"""Verification tools: synthetic clouds, point-to-mesh RMS, exhaustive binary minimum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .field import PointCloud
from .grid import ConfigurationError, InputError, ScalarGrid
from .solver import DIRICHLET, FREE
from .surface import TriangleMesh

MAX_ENUMERATED = 20


@dataclass(frozen=True)
class SyntheticCloudSpec:
    count: int = 180
    radius: float = 1.0
    hole_cap_angle: float = 0.0
    density_skew: float = 1.0
    noise_sigma: float = 0.0
    orientation_error_deg: float = 0.0
    seed: int = 0
    shape: str = "sphere"

    def __post_init__(self):
        if self.shape != "sphere":
            raise ConfigurationError(f"unsupported synthetic shape {self.shape!r}")
        if self.count < 1 or not self.radius > 0:
            raise ConfigurationError("count must be >= 1 and radius > 0")
        if self.hole_cap_angle < 0 or self.density_skew < 1 or self.noise_sigma < 0:
            raise ConfigurationError("hole_cap_angle >= 0, density_skew >= 1, noise_sigma >= 0 required")
        if self.orientation_error_deg < 0:
            raise ConfigurationError("orientation_error_deg must be >= 0")


def generate_cloud(spec: SyntheticCloudSpec) -> PointCloud:
    """Area-uniform samples on a sphere centred at the origin.

    ``count`` candidates are drawn, then filtered: the polar cap of angular
    radius ``hole_cap_angle`` around +z is removed, and candidates with
    x < 0 survive with probability ``1 / density_skew``. Every random stream
    is drawn for all candidates, so changing one perturbation does not
    reshuffle the others.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.count
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    keep_draw = rng.random(n)
    radial_noise = rng.standard_normal(n)
    axis_draw = rng.uniform(0.0, 2.0 * np.pi, n)

    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)

    keep = np.ones(n, dtype=bool)
    if spec.hole_cap_angle > 0:
        keep &= z < math.cos(spec.hole_cap_angle)
    if spec.density_skew > 1:
        keep &= (dirs[:, 0] >= 0) | (keep_draw < 1.0 / spec.density_skew)

    points = dirs * (spec.radius + spec.noise_sigma * radial_noise)[:, None]
    normals = dirs.copy()
    if spec.orientation_error_deg > 0:
        normals = _tilt(normals, math.radians(spec.orientation_error_deg), axis_draw)
    return PointCloud(points[keep], normals[keep])


def _tilt(normals: np.ndarray, angle: float, spin: np.ndarray) -> np.ndarray:
    """Rotate each unit normal by ``angle`` about a perpendicular axis chosen by ``spin``."""
    helper = np.where(np.abs(normals[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(normals, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normals, e1)
    axis = np.cos(spin)[:, None] * e1 + np.sin(spin)[:, None] * e2
    # Rodrigues with axis perpendicular to the vector
    return normals * math.cos(angle) + np.cross(axis, normals) * math.sin(angle)


# --- point-to-triangle distance ----------------------------------------------

@nb.njit(cache=True)
def point_triangle_dist2(p, a, b, c):
    """Squared distance from ``p`` to triangle ``abc`` (closest-point region test)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        q = a
    else:
        bp = p - b
        d3 = ab @ bp
        d4 = ac @ bp
        if d3 >= 0.0 and d4 <= d3:
            q = b
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                q = a + ab * (d1 / (d1 - d3))
            else:
                cp = p - c
                d5 = ab @ cp
                d6 = ac @ cp
                if d6 >= 0.0 and d5 <= d6:
                    q = c
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        q = a + ac * (d2 / (d2 - d6))
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            q = b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
                        else:
                            denom = 1.0 / (va + vb + vc)
                            q = a + ab * (vb * denom) + ac * (vc * denom)
    d = p - q
    return d @ d


@nb.njit(cache=True)
def _brute_nearest(points, tri_pts):
    out = np.empty(len(points))
    for i in range(len(points)):
        best = np.inf
        for t in range(len(tri_pts)):
            d = point_triangle_dist2(points[i], tri_pts[t, 0], tri_pts[t, 1], tri_pts[t, 2])
            if d < best:
                best = d
        out[i] = best
    return out


class BVH:
    """Axis-aligned bounding-box hierarchy over triangles, median split on centroids."""

    LEAF = 4

    def __init__(self, mesh: TriangleMesh):
        if len(mesh) == 0:
            raise InputError("cannot build a BVH over an empty mesh")
        tri_pts = mesh.vertices[mesh.triangles]
        centroids = tri_pts.mean(axis=1)
        lo_all, hi_all = tri_pts.min(axis=1), tri_pts.max(axis=1)

        order = np.arange(len(tri_pts))
        lo, hi, left, right, start, count = [], [], [], [], [], []
        stack = [(0, len(order), -1, 0)]
        while stack:
            s, e, parent, side = stack.pop()
            node = len(lo)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            idx = order[s:e]
            lo.append(lo_all[idx].min(axis=0))
            hi.append(hi_all[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            if e - s <= self.LEAF:
                start.append(s)
                count.append(e - s)
                continue
            start.append(-1)
            count.append(0)
            axis = int(np.argmax(np.ptp(centroids[idx], axis=0)))
            order[s:e] = idx[np.argsort(centroids[idx, axis], kind="stable")]
            mid = (s + e) // 2
            stack.append((mid, e, node, 1))
            stack.append((s, mid, node, 0))

        self.tri_pts = np.ascontiguousarray(tri_pts[order])
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)

    def nearest_dist2(self, points: np.ndarray) -> np.ndarray:
        return _bvh_nearest(np.ascontiguousarray(points, dtype=np.float64), self.tri_pts,
                            self.lo, self.hi, self.left, self.right, self.start, self.count)


@nb.njit(cache=True)
def _box_dist2(p, lo, hi):
    d = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            d += (lo[k] - p[k]) ** 2
        elif p[k] > hi[k]:
            d += (p[k] - hi[k]) ** 2
    return d


@nb.njit(cache=True)
def _bvh_nearest(points, tri_pts, lo, hi, left, right, start, count):
    out = np.empty(len(points))
    stack = np.empty(128, dtype=np.int64)
    for i in range(len(points)):
        p = points[i]
        best = np.inf
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            # margin keeps pruning strictly conservative under rounding
            if _box_dist2(p, lo[node], hi[node]) > best * (1.0 + 1e-9) + 1e-300:
                continue
            if count[node] > 0:
                for t in range(start[node], start[node] + count[node]):
                    d = point_triangle_dist2(p, tri_pts[t, 0], tri_pts[t, 1], tri_pts[t, 2])
                    if d < best:
                        best = d
            else:
                a, b = left[node], right[node]
                if _box_dist2(p, lo[a], hi[a]) > _box_dist2(p, lo[b], hi[b]):
                    a, b = b, a
                stack[top] = b
                stack[top + 1] = a
                top += 2
        out[i] = best
    return out


def nearest_distances(mesh: TriangleMesh, points: np.ndarray, brute_force: bool = False) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(mesh) == 0:
        raise InputError("distance to an empty mesh is undefined")
    if brute_force:
        d2 = _brute_nearest(points, np.ascontiguousarray(mesh.vertices[mesh.triangles]))
    else:
        d2 = BVH(mesh).nearest_dist2(points)
    return np.sqrt(d2)


def rms_distance(mesh: TriangleMesh, points, brute_force: bool = False) -> float:
    """Root mean square of the distances from ``points`` to their nearest triangle."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise InputError("rms_distance needs at least one point")
    d = nearest_distances(mesh, pts, brute_force=brute_force)
    return float(np.sqrt(np.mean(d**2)))


# --- exhaustive binary oracle -------------------------------------------------

def _tv_energy_batch(u: np.ndarray, div: np.ndarray, lam: float, h: float) -> np.ndarray:
    """Epsilon-free TV energy for a batch ``(B, nz, ny, nx)`` of assignments."""
    sq = np.zeros(u.shape)
    for axis in (1, 2, 3):
        d = np.diff(u, axis=axis) / h
        pad = [(0, 0)] * 4
        pad[axis] = (0, 1)
        sq += np.pad(d, pad) ** 2
    tv = np.sqrt(sq).sum(axis=(1, 2, 3))
    data = np.tensordot(u, div, axes=3)
    return (lam * tv - data) * h**3


def exhaustive_binary_min(
    div: ScalarGrid, lam: float, boundary: str = DIRICHLET, chunk: int = 1 << 14
) -> tuple[ScalarGrid, float]:
    """Minimise the binary TV energy by enumerating every assignment.

    Free vertices are the interior ones for ``boundary='dirichlet'`` (the
    rest stay 0) and all vertices for ``boundary='free'``. Assignments are
    enumerated in lexicographic order of the free vertices' flat indices;
    ties keep the first, i.e. lexicographically smallest, one.
    """
    frame = div.frame
    nx, ny, nz = frame.dims.as_tuple()
    if frame.dims.size > MAX_ENUMERATED:
        raise ConfigurationError(
            f"exhaustive search is limited to {MAX_ENUMERATED} vertices, grid has {frame.dims.size}"
        )
    if boundary not in (DIRICHLET, FREE):
        raise ConfigurationError(f"unknown boundary {boundary!r}")
    if boundary == FREE:
        free = np.arange(frame.dims.size)
    else:
        z, y, x = np.unravel_index(np.arange(frame.dims.size), frame.dims.shape)
        interior = (x > 0) & (x < nx - 1) & (y > 0) & (y < ny - 1) & (z > 0) & (z < nz - 1)
        free = np.flatnonzero(interior)

    k = len(free)
    best_e, best_m = np.inf, 0
    shifts = np.arange(k - 1, -1, -1)
    for lo in range(0, 1 << k, chunk):
        m = np.arange(lo, min(lo + chunk, 1 << k))
        bits = ((m[:, None] >> shifts) & 1).astype(np.float64)
        u = np.zeros((len(m), frame.dims.size))
        u[:, free] = bits
        e = _tv_energy_batch(u.reshape((len(m),) + frame.dims.shape), div.array, lam, frame.h)
        i = int(np.argmin(e))
        if e[i] < best_e:
            best_e, best_m = float(e[i]), int(m[i])
    u = np.zeros(frame.dims.size)
    if k:
        u[free] = (best_m >> shifts) & 1
    return ScalarGrid(frame, u), best_e
