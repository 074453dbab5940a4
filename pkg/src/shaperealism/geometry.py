"""Mesh file parsing and point-cloud preprocessing.

OBJ and PLY parsers, mesh-to-point-cloud conversion, unit-sphere
normalization, farthest point sampling, and the fixed-size resampling step
used before encoding. Everything here is pure numpy on immutable inputs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    """Malformed mesh file. Carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MeshValidationError(ValueError):
    """Structurally parseable mesh that violates a Mesh invariant."""


class EmptyMeshError(MeshValidationError):
    """Mesh with no vertices."""


class DegenerateGeometryError(ValueError):
    """Point cloud with zero spatial extent (all points coincide)."""


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: vertices (N, 3) float64, faces (M, 3) int64 indices."""

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def validate(self) -> "Mesh":
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshValidationError(f"vertices must be (N, 3), got {self.vertices.shape}")
        if len(self.vertices) < 1:
            raise EmptyMeshError("mesh has no vertices")
        if not np.isfinite(self.vertices).all():
            raise MeshValidationError("non-finite vertex coordinate")
        if len(self.faces):
            if self.faces.ndim != 2 or self.faces.shape[1] != 3:
                raise MeshValidationError(f"faces must be (M, 3), got {self.faces.shape}")
            lo, hi = int(self.faces.min()), int(self.faces.max())
            if lo < 0 or hi >= len(self.vertices):
                raise MeshValidationError(
                    f"face index {lo if lo < 0 else hi} out of range for {len(self.vertices)} vertices"
                )
        return self


@dataclass(frozen=True)
class PointCloud:
    """Point set (N, 3). `normalized` marks output of normalize_point_cloud:
    centroid at the origin and max point norm 1, both within 1e-6."""

    points: np.ndarray
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.points)


def _fan_triangulate(poly: list[int], line: int) -> list[tuple[int, int, int]]:
    if len(poly) < 3:
        raise MeshParseError(f"face with {len(poly)} vertices", line)
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def parse_obj(data: bytes | str, name: str = "") -> Mesh:
    """Parse Wavefront OBJ text into a Mesh.

    Only `v` and `f` records are honored; texture/normal references inside
    face entries are dropped, polygons are fan-triangulated, and negative
    face indices resolve against the vertices seen so far.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise MeshParseError("vertex record needs 3 coordinates", lineno)
            try:
                vertices.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
            except ValueError as exc:
                raise MeshParseError(f"bad vertex coordinate: {exc}", lineno) from None
        elif tokens[0] == "f":
            poly = []
            for entry in tokens[1:]:
                head = entry.split("/", 1)[0]
                try:
                    idx = int(head)
                except ValueError:
                    raise MeshParseError(f"bad face index {head!r}", lineno) from None
                if idx == 0:
                    raise MeshParseError("face index 0 is invalid in OBJ", lineno)
                resolved = len(vertices) + idx if idx < 0 else idx - 1
                if resolved < 0:
                    raise MeshValidationError(f"line {lineno}: face index {idx} before any vertex")
                poly.append(resolved)
            faces.extend(_fan_triangulate(poly, lineno))
        # all other record types (vt, vn, usemtl, ...) are ignored
    if not vertices:
        raise EmptyMeshError("OBJ file declares no vertices")
    mesh = Mesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        name=name,
    )
    return mesh.validate()


def serialize_obj(mesh: Mesh) -> bytes:
    """Write a Mesh as OBJ text. Floats use repr so a reparse is exact."""
    lines = [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    return ("\n".join(lines) + "\n").encode("utf-8")


# PLY scalar type -> (struct format char, byte size)
_PLY_TYPES = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


@dataclass
class _PlyElement:
    name: str
    count: int
    # scalar property: (name, type); list property: (name, (count_type, item_type))
    properties: list = field(default_factory=list)


def _parse_ply_header(data: bytes) -> tuple[str, list[_PlyElement], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply"):
        raise MeshParseError("missing 'ply' magic")
    if end < 0:
        raise MeshParseError("missing 'end_header'")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise MeshParseError("header not newline-terminated")
    body_offset = nl + 1
    header = data[:end].decode("ascii", errors="replace")

    fmt = None
    elements: list[_PlyElement] = []
    for lineno, raw in enumerate(header.splitlines(), start=1):
        tokens = raw.strip().split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise MeshParseError(f"unsupported PLY format {raw.strip()!r}", lineno)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise MeshParseError(f"bad element declaration {raw.strip()!r}", lineno)
            try:
                elements.append(_PlyElement(tokens[1], int(tokens[2])))
            except ValueError:
                raise MeshParseError(f"bad element count {tokens[2]!r}", lineno) from None
        elif tokens[0] == "property":
            if not elements:
                raise MeshParseError("property before any element", lineno)
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise MeshParseError(f"bad list property {raw.strip()!r}", lineno)
                for t in (tokens[2], tokens[3]):
                    if t not in _PLY_TYPES:
                        raise MeshParseError(f"unknown PLY type {t!r}", lineno)
                elements[-1].properties.append((tokens[4], (tokens[2], tokens[3])))
            else:
                if len(tokens) != 3:
                    raise MeshParseError(f"bad property {raw.strip()!r}", lineno)
                if tokens[1] not in _PLY_TYPES:
                    raise MeshParseError(f"unknown PLY type {tokens[1]!r}", lineno)
                elements[-1].properties.append((tokens[2], tokens[1]))
    if fmt is None:
        raise MeshParseError("PLY header has no format line")
    return fmt, elements, body_offset


def parse_ply(data: bytes, name: str = "") -> Mesh:
    """Parse ASCII or binary-little-endian PLY into a Mesh.

    Vertex x/y/z may be float or double; every other property is skipped by
    its declared size. Face lists are fan-triangulated like parse_obj.
    """
    fmt, elements, offset = _parse_ply_header(data)
    vertices: np.ndarray | None = None
    raw_faces: list[list[int]] = []

    if fmt == "ascii":
        tokens = data[offset:].decode("ascii", errors="replace").split()
        pos = 0

        def take(n: int, elem: str) -> list[str]:
            nonlocal pos
            if pos + n > len(tokens):
                raise MeshParseError(f"element '{elem}': payload truncated")
            out = tokens[pos:pos + n]
            pos += n
            return out

        for elem in elements:
            is_vertex = elem.name == "vertex"
            rows = []
            for _ in range(elem.count):
                row = {}
                for pname, ptype in elem.properties:
                    if isinstance(ptype, tuple):
                        try:
                            cnt = int(float(take(1, elem.name)[0]))
                        except ValueError:
                            raise MeshParseError(f"element '{elem.name}': bad list count") from None
                        items = take(cnt, elem.name)
                        row[pname] = items
                    else:
                        row[pname] = take(1, elem.name)[0]
                rows.append(row)
            if is_vertex:
                try:
                    vertices = np.array(
                        [[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows],
                        dtype=np.float64,
                    ).reshape(-1, 3)
                except (KeyError, ValueError) as exc:
                    raise MeshParseError(f"element 'vertex': {exc}") from None
            elif elem.name == "face":
                for r in rows:
                    for pname, ptype in elem.properties:
                        if isinstance(ptype, tuple):
                            try:
                                raw_faces.append([int(v) for v in r[pname]])
                            except ValueError:
                                raise MeshParseError("element 'face': bad index") from None
    else:
        buf, pos = data, offset
        for elem in elements:
            is_vertex = elem.name == "vertex"
            is_face = elem.name == "face"
            verts = np.empty((elem.count, 3), dtype=np.float64) if is_vertex else None
            for i in range(elem.count):
                row = {}
                for pname, ptype in elem.properties:
                    if isinstance(ptype, tuple):
                        cfmt, csize = _PLY_TYPES[ptype[0]]
                        ifmt, isize = _PLY_TYPES[ptype[1]]
                        if pos + csize > len(buf):
                            raise MeshParseError(f"element '{elem.name}': payload truncated")
                        cnt = struct.unpack_from("<" + cfmt, buf, pos)[0]
                        pos += csize
                        if pos + cnt * isize > len(buf):
                            raise MeshParseError(f"element '{elem.name}': payload truncated")
                        row[pname] = struct.unpack_from(f"<{cnt}{ifmt}", buf, pos)
                        pos += cnt * isize
                    else:
                        sfmt, size = _PLY_TYPES[ptype]
                        if pos + size > len(buf):
                            raise MeshParseError(f"element '{elem.name}': payload truncated")
                        row[pname] = struct.unpack_from("<" + sfmt, buf, pos)[0]
                        pos += size
                if is_vertex:
                    try:
                        verts[i] = (row["x"], row["y"], row["z"])
                    except KeyError as exc:
                        raise MeshParseError(f"element 'vertex': missing property {exc}") from None
                elif is_face:
                    for pname, ptype in elem.properties:
                        if isinstance(ptype, tuple):
                            raw_faces.append([int(v) for v in row[pname]])
            if is_vertex:
                vertices = verts

    if vertices is None or len(vertices) == 0:
        raise EmptyMeshError("PLY file declares no vertices")
    faces: list[tuple[int, int, int]] = []
    for poly in raw_faces:
        faces.extend(_fan_triangulate(poly, line=0))
    mesh = Mesh(
        vertices=vertices,
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        name=name,
    )
    return mesh.validate()


def serialize_ply(mesh: Mesh) -> bytes:
    """Write a Mesh as ASCII PLY with double-precision coordinates."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines += [f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in mesh.vertices]
    lines += [f"3 {int(f[0])} {int(f[1])} {int(f[2])}" for f in mesh.faces]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_mesh_bytes(data: bytes, name: str = "") -> Mesh:
    """Dispatch on content: PLY magic first, else OBJ."""
    if data.lstrip()[:3] == b"ply":
        return parse_ply(data, name=name)
    return parse_obj(data, name=name)


def parse_mesh_file(path) -> Mesh:
    """Read and parse a mesh file, naming the mesh after the file stem."""
    p = Path(path)
    return parse_mesh_bytes(p.read_bytes(), name=p.stem)


def mesh_to_point_cloud(mesh: Mesh) -> PointCloud:
    """Vertices become points verbatim; faces are dropped, order preserved."""
    mesh.validate()
    return PointCloud(points=mesh.vertices.copy(), normalized=False)


def normalize_point_cloud(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    The centroid uses exactly rounded summation, so point order cannot leak
    into the result. Output coordinates are rounded to 1e-9: translation or
    scaling of the input perturbs the normalized values by ~1e-15, and
    without the rounding that noise flips tie-breaks in the downstream
    sort/FPS stages into visibly different point selections.
    """
    points = np.asarray(pc.points, dtype=np.float64)
    if len(points) < 1:
        raise DegenerateGeometryError("empty point cloud")
    centroid = np.array([math.fsum(points[:, a]) for a in range(3)]) / len(points)
    centered = points - centroid
    max_norm = float(np.linalg.norm(centered, axis=1).max())
    scale = float(np.abs(points).max())
    if max_norm <= 1e-12 * max(1.0, scale):
        raise DegenerateGeometryError("all points coincide; cannot normalize")
    return PointCloud(points=np.round(centered / max_norm, 9), normalized=True)


def farthest_point_sample_indices(points: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy FPS over (N, 3) points; returns k indices in selection order.

    Each pick maximizes the minimum squared distance to the selected set,
    ties going to the lowest index. Deterministic for a fixed start_index.
    """
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index must be in [0, {n}), got {start_index}")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = start_index
    min_d2 = np.sum((points - points[start_index]) ** 2, axis=1)
    min_d2[start_index] = -1.0  # never re-pick a selected index
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        d2 = np.sum((points - points[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -1.0
    return selected


def farthest_point_sample(pc: PointCloud, k: int, start_index: int = 0) -> PointCloud:
    """FPS subset of a cloud, in selection order.

    The result is generally not centered anymore, so `normalized` is False
    even when the input was normalized.
    """
    idx = farthest_point_sample_indices(pc.points, k, start_index)
    return PointCloud(points=pc.points[idx].copy(), normalized=False)


def canonical_order(pc: PointCloud) -> PointCloud:
    """Sort points lexicographically by (x, y, z).

    Scoring pipelines sort before any index-seeded step (FPS start, cyclic
    padding) so results cannot depend on vertex order in the source file.
    """
    points = pc.points
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return PointCloud(points=points[order].copy(), normalized=pc.normalized)


def resample_point_cloud(pc: PointCloud, count: int, start_index: int = 0) -> PointCloud:
    """Return exactly `count` points: FPS when larger, cyclic repeat when smaller."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    n = len(pc)
    if n > count:
        idx = farthest_point_sample_indices(pc.points, count, start_index)
        points = pc.points[idx]
    elif n < count:
        reps = np.arange(count) % n
        points = pc.points[reps]
    else:
        return PointCloud(points=pc.points.copy(), normalized=pc.normalized)
    # a subset or padded multiset is no longer centered/unit-scaled
    return PointCloud(points=points.copy(), normalized=False)
