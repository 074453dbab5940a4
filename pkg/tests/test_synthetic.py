"""Primitive construction and the graded-noise ladder.

The displacement law is verified against a from-scratch oracle: regenerate
the same Gaussian draw with an independently computed sigma and demand exact
agreement.
"""

import numpy as np
import pytest

from shaperealism.geometry import parse_mesh_file
from shaperealism.synthetic import (
    DEFAULT_LEVELS,
    DEFAULT_NOISE_SCALE,
    PRIMITIVES,
    build_ladder_dataset,
    build_ladder_meshes,
    distort_mesh,
    ladder_label,
    make_box,
    make_sphere,
    write_ladder_files,
)


# primitives -----------------------------------------------------------------


@pytest.mark.parametrize("name,make", PRIMITIVES)
def test_primitive_is_well_formed(name, make):
    mesh = make()
    v, f = mesh.vertices, mesh.faces
    assert v.ndim == 2 and v.shape[1] == 3 and v.dtype == np.float64
    assert f.ndim == 2 and f.shape[1] == 3
    assert f.min() >= 0 and f.max() < len(v)
    # degenerate triangles would survive noise as zero-area slivers
    assert np.all(f[:, 0] != f[:, 1])
    assert np.all(f[:, 1] != f[:, 2])
    assert np.all(f[:, 0] != f[:, 2])
    assert mesh.name == name


@pytest.mark.parametrize("name,make", PRIMITIVES)
def test_primitive_has_no_duplicate_vertices(name, make):
    # duplicated seam vertices would alias as zero-distance neighbors
    v = make().vertices
    assert len(np.unique(np.round(v, 9), axis=0)) == len(v)


@pytest.mark.parametrize("name,make", PRIMITIVES)
def test_primitive_exceeds_resample_budget(name, make):
    # keeping every primitive above 512 points means downsampling never
    # needs to pad with repeats
    assert len(make().vertices) > 512


def test_every_vertex_is_referenced():
    for name, make in PRIMITIVES:
        mesh = make()
        assert len(np.unique(mesh.faces)) == len(mesh.vertices), name


# distortion ladder ----------------------------------------------------------


def test_level_zero_is_passthrough():
    mesh = make_sphere()
    out = distort_mesh(mesh, 0)
    assert np.array_equal(out.vertices, mesh.vertices)
    assert out.name == mesh.name


def test_level_bounds_checked():
    mesh = make_box()
    with pytest.raises(ValueError):
        distort_mesh(mesh, -1)
    with pytest.raises(ValueError):
        distort_mesh(mesh, DEFAULT_LEVELS)


def test_displacement_law_matches_oracle():
    mesh = make_sphere()
    out = distort_mesh(mesh, level=5, num_levels=8, noise_scale=0.25,
                       rng=np.random.default_rng(99))
    centroid = mesh.vertices.mean(axis=0)
    radius = np.linalg.norm(mesh.vertices - centroid, axis=1).max()
    sigma = 0.25 * radius * 5 / 7
    expected = mesh.vertices + np.random.default_rng(99).normal(0.0, sigma, mesh.vertices.shape)
    assert np.array_equal(out.vertices, expected)
    assert np.array_equal(out.faces, mesh.faces)
    assert out.name == "sphere_l5"


def test_noise_grows_with_level():
    mesh = make_box()
    mags = []
    for level in range(1, DEFAULT_LEVELS):
        out = distort_mesh(mesh, level, rng=np.random.default_rng(4))
        mags.append(float(np.abs(out.vertices - mesh.vertices).mean()))
    assert all(a < b for a, b in zip(mags, mags[1:]))


def test_noise_tracks_mesh_size():
    """Scaling the mesh scales the displacement by the same factor."""
    from shaperealism.geometry import Mesh

    mesh = make_sphere()
    big = Mesh(vertices=mesh.vertices * 3.0, faces=mesh.faces.copy(), name="big")
    d_small = distort_mesh(mesh, 4, rng=np.random.default_rng(1)).vertices - mesh.vertices
    d_big = distort_mesh(big, 4, rng=np.random.default_rng(1)).vertices - big.vertices
    # recovering the displacement by subtraction costs a few ulp of the
    # vertex magnitude, so compare absolutely rather than relatively
    assert np.allclose(d_big, 3.0 * d_small, rtol=0, atol=1e-10)


def test_ladder_labels_span_unit_interval():
    labels = [ladder_label(lv) for lv in range(DEFAULT_LEVELS)]
    assert labels[0] == 1.0 and labels[-1] == 0.0
    steps = [a - b for a, b in zip(labels, labels[1:])]
    assert all(abs(s - 1 / 7) < 1e-12 for s in steps)
    assert ladder_label(1, num_levels=5) == 0.75


# ladder datasets ------------------------------------------------------------


def test_ladder_grid_shape_and_labels():
    entries = list(build_ladder_meshes(seed=1, num_objects=6, num_levels=8))
    assert len(entries) == 48
    mesh_ids = [mid for _, mid, _, _ in entries]
    assert len(set(mesh_ids)) == 48
    for oid, mid, mesh, label in entries:
        level = int(mid.rsplit("_l", 1)[1])
        assert label == ladder_label(level)
        assert mid.startswith(oid)


def test_ladder_is_deterministic_and_seed_sensitive():
    a = {mid: mesh.vertices for _, mid, mesh, _ in build_ladder_meshes(seed=5, num_objects=2)}
    b = {mid: mesh.vertices for _, mid, mesh, _ in build_ladder_meshes(seed=5, num_objects=2)}
    c = {mid: mesh.vertices for _, mid, mesh, _ in build_ladder_meshes(seed=6, num_objects=2)}
    for mid in a:
        assert np.array_equal(a[mid], b[mid])
    # pristine level ignores the seed; noisy levels do not
    assert np.array_equal(a["sphere_l0"], c["sphere_l0"])
    assert not np.array_equal(a["sphere_l1"], c["sphere_l1"])


def test_ladder_parameter_validation():
    with pytest.raises(ValueError):
        list(build_ladder_meshes(num_objects=0))
    with pytest.raises(ValueError):
        list(build_ladder_meshes(num_objects=len(PRIMITIVES) + 1))
    with pytest.raises(ValueError):
        list(build_ladder_meshes(num_levels=1))


def test_ladder_dataset_inlines_geometry():
    ds = build_ladder_dataset(seed=2, num_objects=2, num_levels=4)
    assert ds.object_ids() == ["sphere", "box"]
    assert ds.mesh_count() == 8
    for oid, entry in ds.iter_meshes():
        assert entry.points is not None and entry.file is None
        level = int(entry.mesh_id.rsplit("_l", 1)[1])
        assert entry.label == ladder_label(level, num_levels=4)


def test_write_ladder_files_round_trip(tmp_path):
    files = write_ladder_files(tmp_path, seed=3, num_objects=1, num_levels=3)
    assert set(files) == {"sphere_l0", "sphere_l1", "sphere_l2"}
    reference = {mid: mesh for _, mid, mesh, _ in
                 build_ladder_meshes(seed=3, num_objects=1, num_levels=3)}
    for mid, rel in files.items():
        mesh = parse_mesh_file(tmp_path / rel)
        assert np.array_equal(mesh.vertices, reference[mid].vertices)
        assert np.array_equal(mesh.faces, reference[mid].faces)
