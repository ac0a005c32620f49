"""Point cloud ingestion and mesh serialisation (PLY / OBJ / plain text)."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .field import PointCloud
from .grid import InputError
from .surface import TriangleMesh

log = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class _PlyElement:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.props: list[tuple[str, str, str | None]] = []  # (name, type, list count type)


def _read_ply_header(f) -> tuple[str, list[_PlyElement]]:
    if f.readline().strip() != b"ply":
        raise InputError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[_PlyElement] = []
    while True:
        line = f.readline()
        if not line:
            raise InputError("PLY header is not terminated by 'end_header'")
        words = line.decode("ascii", "replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            fmt = words[1]
        elif words[0] == "element":
            elements.append(_PlyElement(words[1], int(words[2])))
        elif words[0] == "property":
            if not elements:
                raise InputError("PLY property declared before any element")
            if words[1] == "list":
                elements[-1].props.append((words[4], words[3], words[2]))
            else:
                elements[-1].props.append((words[2], words[1], None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise InputError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _ply_dtype(t: str, fmt: str) -> np.dtype:
    try:
        code = _PLY_TYPES[t]
    except KeyError:
        raise InputError(f"unknown PLY property type {t!r}") from None
    return np.dtype(("<" if fmt == "binary_little_endian" else ">") + code)


def read_ply(path) -> dict[str, dict[str, np.ndarray]]:
    """Parse a PLY file into ``{element: {property: array}}``.

    List properties (faces) come back as 2D arrays and must have a constant
    length per element.
    """
    with open(path, "rb") as f:
        fmt, elements = _read_ply_header(f)
        body = f.read()
    out: dict[str, dict[str, np.ndarray]] = {}
    if fmt == "ascii":
        lines = iter(body.decode("ascii", "replace").splitlines())
        for el in elements:
            rows = []
            for _ in range(el.count):
                try:
                    rows.append(next(lines).split())
                except StopIteration:
                    raise InputError(f"PLY ended inside element {el.name!r}") from None
            out[el.name] = _ascii_element(el, rows)
        return out

    pos = 0
    for el in elements:
        if all(p[2] is None for p in el.props):
            dt = np.dtype([(name, _ply_dtype(t, fmt)) for name, t, _ in el.props])
            nbytes = dt.itemsize * el.count
            if pos + nbytes > len(body):
                raise InputError(f"PLY ended inside element {el.name!r}")
            rec = np.frombuffer(body, dtype=dt, count=el.count, offset=pos)
            pos += nbytes
            out[el.name] = {name: rec[name].astype(np.float64) for name, _, _ in el.props}
            continue
        values: dict[str, list] = {name: [] for name, _, _ in el.props}
        for _ in range(el.count):
            for name, t, count_t in el.props:
                if count_t is None:
                    dt = _ply_dtype(t, fmt)
                    values[name].append(np.frombuffer(body, dt, 1, pos)[0])
                    pos += dt.itemsize
                else:
                    cdt = _ply_dtype(count_t, fmt)
                    n = int(np.frombuffer(body, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    dt = _ply_dtype(t, fmt)
                    values[name].append(np.frombuffer(body, dt, n, pos))
                    pos += dt.itemsize * n
        out[el.name] = {k: np.array(v) for k, v in values.items()}
    return out


def _ascii_element(el: _PlyElement, rows: list[list[str]]) -> dict[str, np.ndarray]:
    values: dict[str, list] = {name: [] for name, _, _ in el.props}
    try:
        for row in rows:
            i = 0
            for name, _, count_t in el.props:
                if count_t is None:
                    values[name].append(float(row[i]))
                    i += 1
                else:
                    n = int(row[i])
                    values[name].append([int(x) for x in row[i + 1 : i + 1 + n]])
                    i += 1 + n
    except (IndexError, ValueError) as exc:
        raise InputError(f"malformed PLY row in element {el.name!r}: {exc}") from None
    return {k: np.array(v) for k, v in values.items()}


def _read_text_columns(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                vals = [float(x) for x in line.replace(",", " ").split()]
            except ValueError:
                raise InputError(f"{path}:{lineno}: expected numbers, got {line!r}") from None
            if len(vals) not in (3, 6):
                raise InputError(f"{path}:{lineno}: expected 3 or 6 numbers, got {len(vals)}")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError(f"{path}:{lineno}: mixed 3- and 6-column lines")
            rows.append(vals)
    if not rows:
        return np.empty((0, 3))
    return np.array(rows)


def read_cloud(path, viewdir=None, viewdir_file=None) -> PointCloud:
    """Load oriented samples from PLY or whitespace-separated text.

    Orientation precedence: per-point normals stored in the file, then a
    single view direction for every point, then a per-point direction file
    (one ``x y z`` line per input point). Points whose orientation has zero
    length are dropped with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file {path} does not exist")
    with open(path, "rb") as f:
        is_ply = f.read(3) == b"ply"

    normals = None
    if is_ply:
        data = read_ply(path)
        if "vertex" not in data:
            raise InputError(f"{path}: PLY has no 'vertex' element")
        v = data["vertex"]
        try:
            points = np.stack([v["x"], v["y"], v["z"]], axis=1)
        except KeyError:
            raise InputError(f"{path}: PLY vertices need x, y, z properties") from None
        if all(k in v for k in ("nx", "ny", "nz")):
            normals = np.stack([v["nx"], v["ny"], v["nz"]], axis=1)
    else:
        cols = _read_text_columns(path)
        points = cols[:, :3]
        if cols.shape[1] == 6:
            normals = cols[:, 3:]

    if len(points) == 0:
        raise InputError(f"{path}: no points found")
    if not np.all(np.isfinite(points)):
        raise InputError(f"{path}: non-finite coordinates")

    if normals is None:
        if viewdir is not None:
            normals = np.broadcast_to(np.asarray(viewdir, dtype=float).reshape(1, 3), points.shape).copy()
        elif viewdir_file is not None:
            normals = _read_text_columns(viewdir_file)
            if normals.shape != points.shape:
                raise InputError(
                    f"{viewdir_file}: {len(normals)} directions for {len(points)} points "
                    "(expected one 'x y z' line per point)"
                )
        else:
            raise InputError(
                f"{path}: points carry no normals; give a view direction or a direction file"
            )

    length = np.linalg.norm(normals, axis=1)
    good = np.isfinite(length) & (length > 0)
    if not np.all(good):
        log.warning("dropped %d points with zero-length or non-finite orientation", int((~good).sum()))
    if not np.any(good):
        raise InputError(f"{path}: no point has a usable orientation")
    return PointCloud(points[good], normals[good])


def write_cloud(cloud: PointCloud, path) -> None:
    """Six-column text: ``x y z nx ny nz``, 17 significant digits."""
    np.savetxt(path, np.hstack([cloud.points, cloud.normals]), fmt="%.17g")


def write_mesh(mesh: TriangleMesh, path) -> None:
    """Serialise by extension: ``.obj`` (text, 1-based) or ``.ply`` (binary little endian)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in (".obj", ".ply"):
        raise InputError(f"unsupported mesh extension {ext!r} (use .obj or .ply)")
    if len(mesh) == 0:
        log.warning("writing an empty mesh to %s", path)
    if ext == ".obj":
        with open(path, "w") as f:
            for v in mesh.vertices:
                f.write("v %.17g %.17g %.17g\n" % tuple(v))
            for t in mesh.triangles + 1:
                f.write("f %d %d %d\n" % tuple(t))
        return
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    faces = np.zeros(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(mesh.vertices.astype("<f4").tobytes())
        f.write(faces.tobytes())


def read_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        verts, tris = [], []
        with open(path) as f:
            for line in f:
                words = line.split()
                if not words:
                    continue
                if words[0] == "v":
                    verts.append([float(x) for x in words[1:4]])
                elif words[0] == "f":
                    tris.append([int(w.split("/")[0]) - 1 for w in words[1:4]])
        return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))
    data = read_ply(path)
    v = data.get("vertex", {})
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1) if v else np.empty((0, 3))
    face = data.get("face", {})
    key = next((k for k in ("vertex_indices", "vertex_index") if k in face), None)
    tris = np.asarray(face[key], dtype=np.int64).reshape(-1, 3) if key else np.empty((0, 3), dtype=np.int64)
    return TriangleMesh(verts, tris)


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
