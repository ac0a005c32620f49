"""From relaxed indicator to triangle mesh: threshold, re-smooth, pick isovalue, marching cubes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .field import SMOOTH_PASSES, PointCloud, box_filter, trilinear_sample
from .grid import ConfigurationError, InputError, ScalarGrid

log = logging.getLogger(__name__)

REPORT_MUS = (0.1, 0.25, 0.5, 0.75, 0.9)
TIE_OFFSET = 1e-4  # minimum edge parameter of a mesh vertex


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.triangles)

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        if normalize:
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return n

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def edge_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and how many triangles use each."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def is_watertight(self) -> bool:
        if len(self) == 0:
            return False
        _, counts = self.edge_counts()
        return bool(np.all(counts == 2))

    def is_consistently_oriented(self) -> bool:
        """Every directed edge appears once, so neighbours traverse shared edges oppositely."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return len(np.unique(e, axis=0)) == len(e)

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        edges, _ = self.edge_counts()
        return int(len(used) - len(edges) + len(self.triangles))

    def connected_components(self) -> int:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        if len(self) == 0:
            return 0
        used = np.unique(self.triangles)
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]]])
        n = len(self.vertices)
        adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        return len(np.unique(labels[used]))


def threshold(u: ScalarGrid, mu: float = 0.5) -> tuple[ScalarGrid, int]:
    """Binary indicator ``u > mu`` and the number of inside vertices."""
    if not 0 < mu < 1:
        raise ConfigurationError(f"threshold must lie in (0, 1), got {mu}")
    inside = u.data > mu
    return ScalarGrid(u.frame, inside.astype(np.float64)), int(inside.sum())


def threshold_report(u: ScalarGrid, mus=REPORT_MUS) -> list[tuple[float, int]]:
    return [(mu, threshold(u, mu)[1]) for mu in mus]


def smooth_binary(u_hat: ScalarGrid, passes: int = SMOOTH_PASSES) -> ScalarGrid:
    """Same iterated box filter as the orientation field, zero outside the grid."""
    return ScalarGrid.from_array(u_hat.frame, box_filter(u_hat.array, passes))


def select_isovalue(u_tilde: ScalarGrid, cloud: PointCloud) -> float:
    """Mean of the trilinearly interpolated field over all sample positions."""
    if len(cloud) == 0:
        raise InputError("isovalue selection needs at least one sample")
    return float(np.mean(trilinear_sample(u_tilde, cloud.points)))


# --- marching cubes ---------------------------------------------------------
#
# Corner k of a cell sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1).
# The triangle table is generated, not transcribed: on every cube face the
# crossing points are joined into segments, then chained into loops and
# triangulated. A face with four crossings is resolved by always separating
# its two inside (> iso) corners. The rule looks only at the face's own
# corners, so the two cells sharing a face build the same segments and the
# surface is closed. Segments are directed with the inside on their right
# when seen from outside the cell; triangles therefore wind counter-clockwise
# around the normal pointing to decreasing values.

_CORNERS = np.array([(k & 1, (k >> 1) & 1, (k >> 2) & 1) for k in range(8)])
_EDGES = [(a, a | (1 << axis)) for axis in range(3) for a in range(8) if not a & (1 << axis)]
_EDGE_AXIS = np.array([axis for axis in range(3) for a in range(8) if not a & (1 << axis)])
_EDGE_BASE = np.array([a for axis in range(3) for a in range(8) if not a & (1 << axis)])


def _faces():
    faces = []
    for axis in range(3):
        b, c = [a for a in range(3) if a != axis]
        for side in (0, 1):
            cycle = []
            for db, dc in ((0, 0), (1, 0), (1, 1), (0, 1)):
                cycle.append((side << axis) | (db << b) | (dc << c))
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            faces.append((cycle, normal))
    return faces


def _edge_id(a: int, b: int) -> int:
    return _EDGES.index((min(a, b), max(a, b)))


def _share_face(e0: int, e1: int) -> bool:
    (a0, b0), (a1, b1) = _EDGES[e0], _EDGES[e1]
    corners = {a0, b0, a1, b1}
    return any(all(c in cycle for c in corners) for cycle, _ in _faces())


def _triangulate(loop: list[int]) -> list[int]:
    """Triangulate a crossing loop without diagonals lying in a cube face.

    Such a diagonal could also be generated by the neighbouring cell, and
    the edge would then be shared by four triangles.
    """
    n = len(loop)

    def admissible(i, j):
        return j - i in (1, n - 1) or not _share_face(loop[i], loop[j])

    @lru_cache(maxsize=None)
    def solve(i, j):
        # sub-polygon loop[i..j] closed by the chord (i, j); every
        # triangulation of the loop has one triangle on the chord (0, n-1)
        if j - i < 2:
            return ()
        for k in range(i + 1, j):
            if admissible(i, k) and admissible(k, j):
                left, right = solve(i, k), solve(k, j)
                if left is not None and right is not None:
                    return left + ((i, k, j),) + right
        return None

    found = solve(0, n - 1)
    if found is None:
        raise RuntimeError(f"no admissible triangulation for loop {loop}")
    return [loop[v] for tri in found for v in tri]


@lru_cache(maxsize=None)
def triangle_table() -> np.ndarray:
    """``(256, 3 * max_tris)`` table of local edge ids, padded with -1."""
    mids = np.array([(_CORNERS[a] + _CORNERS[b]) / 2.0 for a, b in _EDGES])
    faces = _faces()
    tables = []
    for case in range(256):
        inside = [(case >> k) & 1 for k in range(8)]
        nxt = {}
        for cycle, normal in faces:
            cross = [(i, _edge_id(cycle[i], cycle[(i + 1) % 4])) for i in range(4)
                     if inside[cycle[i]] != inside[cycle[(i + 1) % 4]]]
            if not cross:
                continue
            if len(cross) == 2:
                pairs = [(cross[0][1], cross[1][1], next(c for c in cycle if inside[c]))]
            else:
                pairs = []
                for i in range(4):
                    if inside[cycle[i]]:
                        pairs.append((_edge_id(cycle[i - 1], cycle[i]),
                                      _edge_id(cycle[i], cycle[(i + 1) % 4]), cycle[i]))
            for e0, e1, corner in pairs:
                p, q = mids[e0], mids[e1]
                side = np.dot(np.cross(normal, q - p), _CORNERS[corner] - p)
                if side > 0:
                    e0, e1 = e1, e0
                nxt[e0] = e1
        tris = []
        remaining = dict(nxt)
        while remaining:
            start = min(remaining)
            loop = [start]
            e = remaining.pop(start)
            while e != start:
                loop.append(e)
                e = remaining.pop(e)
            tris += _triangulate(loop)
        tables.append(tris)
    width = max(len(t) for t in tables)
    out = np.full((256, width), -1, dtype=np.int64)
    for case, tris in enumerate(tables):
        out[case, : len(tris)] = tris
    return out


def marching_cubes(u_tilde: ScalarGrid, isovalue: float) -> TriangleMesh:
    """Extract the ``isovalue`` level set as a welded, outward-oriented triangle mesh.

    One vertex is created per crossing grid edge, numbered in increasing
    edge-key order (``3 * flat_vertex_index + axis``), so the output does not
    depend on traversal order.
    """
    f = u_tilde.array
    frame = u_tilde.frame
    if not (f.min() < isovalue < f.max()):
        log.warning("isovalue %g outside field range, mesh is empty", isovalue)
        return TriangleMesh.empty()
    nz, ny, nx = f.shape
    above = f > isovalue

    keys, verts = [], []
    flat = np.arange(f.size).reshape(f.shape)
    for axis in range(3):
        ax = 2 - axis  # storage axis of x/y/z
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        mask = above[lo] != above[hi]
        i0 = flat[lo][mask]
        f0 = f[lo][mask]
        f1 = f[hi][mask]
        # a value exactly at the isovalue would put several crossings on one grid
        # vertex; keeping t off the ends keeps every triangle non-degenerate
        t = np.clip((isovalue - f0) / (f1 - f0), TIE_OFFSET, 1.0 - TIE_OFFSET)
        x, y, z = i0 % nx, (i0 // nx) % ny, i0 // (nx * ny)
        coords = np.stack([x, y, z], axis=1).astype(np.float64)
        coords[:, axis] += t
        keys.append(3 * i0 + axis)
        verts.append(frame.to_world(coords))
    keys = np.concatenate(keys)
    verts = np.concatenate(verts)
    order = np.argsort(keys, kind="stable")
    keys, verts = keys[order], verts[order]

    case = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(_CORNERS):
        case |= above[dz : nz - 1 + dz, dy : ny - 1 + dy, dx : nx - 1 + dx].astype(np.int64) << k
    case = case.ravel()
    cell_origin = flat[:-1, :-1, :-1].ravel()
    live = (case > 0) & (case < 255)
    case, cell_origin = case[live], cell_origin[live]

    table = triangle_table()[case]  # (cells, width)
    base_off = _CORNERS[_EDGE_BASE] @ np.array([1, nx, nx * ny])
    valid = table >= 0
    local = np.where(valid, table, 0)
    edge_keys = 3 * (cell_origin[:, None] + base_off[local]) + _EDGE_AXIS[local]
    tri_keys = edge_keys[valid].reshape(-1, 3)
    tris = np.searchsorted(keys, tri_keys)
    mesh = TriangleMesh(verts, tris)

    degenerate = mesh.areas() <= 1e-12 * frame.h**2
    if np.any(degenerate):
        log.warning("dropping %d degenerate triangles", int(degenerate.sum()))
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[~degenerate])
    return mesh
