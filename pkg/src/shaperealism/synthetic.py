"""Procedural primitive meshes and the graded-distortion benchmark.

Six parametric primitives, each corrupted by progressive Gaussian vertex
noise across eight levels. Level 0 is pristine (label 1.0) and level 7 is
heavily distorted (label 0.0), giving a dataset whose ground-truth realism
ordering is known by construction.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .dataset import Dataset, DatasetObject, mesh_entry_from_mesh
from .geometry import Mesh, serialize_obj

DEFAULT_LEVELS = 8
DEFAULT_NOISE_SCALE = 0.25  # sigma at the top level, in units of the bounding radius


def _weld(mesh: Mesh, decimals: int = 9) -> Mesh:
    """Merge coincident vertices and drop the triangles that collapse.

    Grid-based builders duplicate vertices along seams (cube edges, cap
    rings, cone apexes). Duplicates produce zero-distance neighbor pairs
    that read as spurious "perfectly smooth" patches, so they are removed
    before the mesh is used.
    """
    key = np.round(mesh.vertices, decimals)
    uniq, remap = np.unique(key, axis=0, return_inverse=True)
    first = np.full(len(uniq), -1, dtype=np.int64)
    for i, u in enumerate(remap):
        if first[u] < 0:
            first[u] = i
    # keep original coordinates (not the rounded keys), first occurrence wins
    verts = mesh.vertices[first]
    faces = remap[mesh.faces]
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return Mesh(vertices=verts, faces=faces[ok], name=mesh.name)


def _grid_mesh(fn, nu: int, nv: int, wrap_u: bool = False, name: str = "surface") -> Mesh:
    """Triangulate a parametric surface sampled on an (nu, nv) grid."""
    us = np.linspace(0.0, 1.0, nu, endpoint=not wrap_u)
    vs = np.linspace(0.0, 1.0, nv)
    verts = np.array([fn(u, v) for v in vs for u in us], dtype=np.float64)
    faces = []
    cols = nu
    for j in range(nv - 1):
        for i in range(cols if wrap_u else cols - 1):
            a = j * cols + i
            b = j * cols + (i + 1) % cols
            c = (j + 1) * cols + i
            d = (j + 1) * cols + (i + 1) % cols
            faces.append((a, b, d))
            faces.append((a, d, c))
    return Mesh(vertices=verts, faces=np.array(faces, dtype=np.int64), name=name)


def make_sphere(segments: int = 26, rings: int = 21) -> Mesh:
    """UV sphere with single pole vertices; no duplicated pole rows."""
    verts = [[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]
    for j in range(1, rings):
        phi = math.pi * j / rings
        for i in range(segments):
            theta = 2.0 * math.pi * i / segments
            verts.append([math.sin(phi) * math.cos(theta), math.cos(phi),
                          math.sin(phi) * math.sin(theta)])
    faces = []
    row = lambda j: 2 + (j - 1) * segments
    for i in range(segments):
        faces.append((0, row(1) + (i + 1) % segments, row(1) + i))
        faces.append((1, row(rings - 1) + i, row(rings - 1) + (i + 1) % segments))
    for j in range(1, rings - 1):
        for i in range(segments):
            a = row(j) + i
            b = row(j) + (i + 1) % segments
            c = row(j + 1) + i
            d = row(j + 1) + (i + 1) % segments
            faces += [(a, b, d), (a, d, c)]
    return Mesh(vertices=np.array(verts, dtype=np.float64),
                faces=np.array(faces, dtype=np.int64), name="sphere")


def make_box(divisions: int = 10) -> Mesh:
    """Six subdivided faces of the unit cube; edge vertices are duplicated."""
    n = divisions
    verts = []
    faces = []
    axes = [(0, 1, 2, 1.0), (0, 1, 2, -1.0), (1, 2, 0, 1.0),
            (1, 2, 0, -1.0), (2, 0, 1, 1.0), (2, 0, 1, -1.0)]
    for ax_u, ax_v, ax_n, sign in axes:
        base = len(verts)
        for j in range(n + 1):
            for i in range(n + 1):
                p = [0.0, 0.0, 0.0]
                p[ax_u] = 2.0 * i / n - 1.0
                p[ax_v] = 2.0 * j / n - 1.0
                p[ax_n] = sign
                verts.append(p)
        for j in range(n):
            for i in range(n):
                a = base + j * (n + 1) + i
                b = a + 1
                c = a + (n + 1)
                d = c + 1
                if sign > 0:
                    faces += [(a, b, d), (a, d, c)]
                else:
                    faces += [(a, d, b), (a, c, d)]
    return _weld(Mesh(vertices=np.array(verts, dtype=np.float64),
                      faces=np.array(faces, dtype=np.int64), name="box"))


def make_cylinder(segments: int = 30, rings: int = 18) -> Mesh:
    def fn(u, v):
        theta = 2.0 * math.pi * u
        return (math.cos(theta), 2.0 * v - 1.0, math.sin(theta))
    side = _grid_mesh(fn, segments, rings, wrap_u=True, name="cylinder")
    # cap fans around top and bottom centers
    verts = [list(p) for p in side.vertices]
    faces = [tuple(f) for f in side.faces]
    for y, flip in ((-1.0, False), (1.0, True)):
        center = len(verts)
        verts.append([0.0, y, 0.0])
        ring = [len(verts) + i for i in range(segments)]
        for i in range(segments):
            theta = 2.0 * math.pi * i / segments
            verts.append([math.cos(theta), y, math.sin(theta)])
        for i in range(segments):
            a, b = ring[i], ring[(i + 1) % segments]
            faces.append((center, b, a) if flip else (center, a, b))
    return _weld(Mesh(vertices=np.array(verts, dtype=np.float64),
                      faces=np.array(faces, dtype=np.int64), name="cylinder"))


def make_cone(segments: int = 30, rings: int = 19) -> Mesh:
    def fn(u, v):
        theta = 2.0 * math.pi * u
        r = 1.0 - v
        return (r * math.cos(theta), 2.0 * v - 1.0, r * math.sin(theta))
    lateral = _grid_mesh(fn, segments, rings, wrap_u=True, name="cone")
    verts = [list(p) for p in lateral.vertices]
    faces = [tuple(f) for f in lateral.faces]
    center = len(verts)
    verts.append([0.0, -1.0, 0.0])
    ring = [len(verts) + i for i in range(segments)]
    for i in range(segments):
        theta = 2.0 * math.pi * i / segments
        verts.append([math.cos(theta), -1.0, math.sin(theta)])
    for i in range(segments):
        faces.append((center, ring[i], ring[(i + 1) % segments]))
    return _weld(Mesh(vertices=np.array(verts, dtype=np.float64),
                      faces=np.array(faces, dtype=np.int64), name="cone"))


def make_torus(major_segments: int = 26, minor_segments: int = 21, minor_radius: float = 0.4) -> Mesh:
    def fn(u, v):
        theta = 2.0 * math.pi * u
        phi = 2.0 * math.pi * v
        r = 1.0 + minor_radius * math.cos(phi)
        return (r * math.cos(theta), minor_radius * math.sin(phi), r * math.sin(theta))
    us = np.linspace(0.0, 1.0, major_segments, endpoint=False)
    vs = np.linspace(0.0, 1.0, minor_segments, endpoint=False)
    verts = np.array([fn(u, v) for v in vs for u in us], dtype=np.float64)
    faces = []
    for j in range(minor_segments):
        for i in range(major_segments):
            a = j * major_segments + i
            b = j * major_segments + (i + 1) % major_segments
            c = ((j + 1) % minor_segments) * major_segments + i
            d = ((j + 1) % minor_segments) * major_segments + (i + 1) % major_segments
            faces += [(a, b, d), (a, d, c)]
    return Mesh(vertices=verts, faces=np.array(faces, dtype=np.int64), name="torus")


def make_wedge(length_divisions: int = 22, edge_divisions: int = 8) -> Mesh:
    """Triangular prism: a triangle profile extruded along z."""
    corners = [(-1.0, -0.6), (1.0, -0.6), (0.0, 1.0)]
    profile = []
    for c in range(3):
        x0, y0 = corners[c]
        x1, y1 = corners[(c + 1) % 3]
        for t in range(edge_divisions):
            f = t / edge_divisions
            profile.append((x0 + f * (x1 - x0), y0 + f * (y1 - y0)))
    m = len(profile)
    zs = np.linspace(-1.0, 1.0, length_divisions)
    verts = np.array([(x, y, z) for z in zs for x, y in profile], dtype=np.float64)
    faces = []
    for j in range(length_divisions - 1):
        for i in range(m):
            a = j * m + i
            b = j * m + (i + 1) % m
            c = (j + 1) * m + i
            d = (j + 1) * m + (i + 1) % m
            faces += [(a, b, d), (a, d, c)]
    # end caps as fans from the first profile vertex
    for j, flip in ((0, False), (length_divisions - 1, True)):
        base = j * m
        for i in range(1, m - 1):
            tri = (base, base + i, base + i + 1)
            faces.append((tri[0], tri[2], tri[1]) if flip else tri)
    return Mesh(vertices=verts, faces=np.array(faces, dtype=np.int64), name="wedge")


PRIMITIVES = (
    ("sphere", make_sphere),
    ("box", make_box),
    ("cylinder", make_cylinder),
    ("cone", make_cone),
    ("torus", make_torus),
    ("wedge", make_wedge),
)


def distort_mesh(mesh: Mesh, level: int, num_levels: int = DEFAULT_LEVELS,
                 noise_scale: float = DEFAULT_NOISE_SCALE, rng: np.random.Generator | None = None) -> Mesh:
    """Add Gaussian vertex noise growing linearly with the level.

    Sigma scales with the mesh's bounding radius, so the ladder reads the
    same regardless of how large the model happens to be in its own
    coordinates: the top level buries local surface detail, level 1 stays
    a subtle wobble.
    """
    if not 0 <= level < num_levels:
        raise ValueError(f"level must be in [0, {num_levels - 1}], got {level}")
    if level == 0:
        return mesh
    rng = rng if rng is not None else np.random.default_rng(0)
    radius = float(np.linalg.norm(mesh.vertices - mesh.vertices.mean(axis=0), axis=1).max())
    sigma = noise_scale * radius * level / (num_levels - 1)
    noisy = mesh.vertices + rng.normal(0.0, sigma, size=mesh.vertices.shape)
    return Mesh(vertices=noisy, faces=mesh.faces.copy(), name=f"{mesh.name}_l{level}")


def ladder_label(level: int, num_levels: int = DEFAULT_LEVELS) -> float:
    return 1.0 - level / (num_levels - 1)


def build_ladder_meshes(seed: int = 0, num_objects: int = 6, num_levels: int = DEFAULT_LEVELS,
                        noise_scale: float = DEFAULT_NOISE_SCALE):
    """Yield (object_id, mesh_id, mesh, label) over the full grid."""
    if not 1 <= num_objects <= len(PRIMITIVES):
        raise ValueError(f"num_objects must be in [1, {len(PRIMITIVES)}], got {num_objects}")
    if num_levels < 2:
        raise ValueError(f"num_levels must be >= 2, got {num_levels}")
    for oi, (name, make) in enumerate(PRIMITIVES[:num_objects]):
        base = make()
        for level in range(num_levels):
            rng = np.random.default_rng([seed, oi, level])
            mesh = distort_mesh(base, level, num_levels, noise_scale, rng)
            yield name, f"{name}_l{level}", mesh, ladder_label(level, num_levels)


def build_ladder_dataset(seed: int = 0, num_objects: int = 6, num_levels: int = DEFAULT_LEVELS,
                         noise_scale: float = DEFAULT_NOISE_SCALE) -> Dataset:
    """Self-contained ladder dataset with inline vertex clouds."""
    by_object: dict[str, list] = {}
    for oid, mid, mesh, label in build_ladder_meshes(seed, num_objects, num_levels, noise_scale):
        by_object.setdefault(oid, []).append(mesh_entry_from_mesh(mid, mesh, label))
    objects = tuple(DatasetObject(object_id=oid, meshes=tuple(entries))
                    for oid, entries in by_object.items())
    return Dataset(objects=objects)


def write_ladder_files(out_dir, seed: int = 0, num_objects: int = 6,
                       num_levels: int = DEFAULT_LEVELS,
                       noise_scale: float = DEFAULT_NOISE_SCALE) -> dict[str, str]:
    """Write each ladder mesh as an OBJ file; returns mesh_id -> relative path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for _, mid, mesh, _ in build_ladder_meshes(seed, num_objects, num_levels, noise_scale):
        rel = f"{mid}.obj"
        (out_dir / rel).write_bytes(serialize_obj(mesh))
        files[mid] = rel
    return files
