import numpy as np
import pytest

from anisonet.synthetic import box_tet_mesh
from anisonet.tetmesh import (
    MeshFormatError,
    MeshTopologyError,
    TetMesh,
    build_node_patches,
    locate_point,
    locate_points,
    read_mesh,
    read_nodal_field,
    write_mesh,
    write_nodal_field,
)

from conftest import UNIT_TET_NODES, jittered_box_mesh

SINGLE_TET = "tmesh 1\n4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 1 2 3\n"


def test_read_single_tet(tmp_path):
    path = tmp_path / "one.tmesh"
    path.write_text(SINGLE_TET)
    mesh = read_mesh(path)
    assert mesh.n_nodes == 4
    assert mesh.n_tets == 1
    assert mesh.boundary.all()  # every face of a single tet is a boundary face


def test_read_negative_orientation_reordered(tmp_path):
    path = tmp_path / "neg.tmesh"
    path.write_text(SINGLE_TET.replace("0 1 2 3", "0 2 1 3"))
    mesh = read_mesh(path)
    assert mesh.volumes[0] == pytest.approx(1.0 / 6.0, rel=1e-15)


def test_read_bad_index_is_topology_error(tmp_path):
    path = tmp_path / "bad.tmesh"
    path.write_text(SINGLE_TET.replace("0 1 2 3", "0 1 2 9"))
    with pytest.raises(MeshTopologyError):
        read_mesh(path)


def test_read_rejects_bad_header(tmp_path):
    path = tmp_path / "junk.tmesh"
    path.write_text("trimesh 2\n")
    with pytest.raises(MeshFormatError):
        read_mesh(path)


def test_degenerate_tet_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    with pytest.raises(MeshTopologyError):
        TetMesh(nodes, [[0, 1, 2, 3]])


def test_repeated_node_rejected():
    with pytest.raises(MeshTopologyError):
        TetMesh(UNIT_TET_NODES, [[0, 1, 2, 2]])


def test_mesh_roundtrip(tmp_path, jittered_box):
    path = tmp_path / "box.tmesh"
    write_mesh(path, jittered_box)
    back = read_mesh(path)
    np.testing.assert_array_equal(back.tets, jittered_box.tets)
    np.testing.assert_allclose(back.nodes, jittered_box.nodes, rtol=0, atol=0)
    np.testing.assert_array_equal(back.boundary, jittered_box.boundary)


def test_nodal_field_roundtrip(tmp_path, rng):
    values = rng.standard_normal(17)
    path = tmp_path / "f.nfield"
    write_nodal_field(path, values)
    np.testing.assert_array_equal(read_nodal_field(path, 17), values)
    wide = rng.standard_normal((5, 3))
    write_nodal_field(path, wide)
    np.testing.assert_array_equal(read_nodal_field(path), wide)


def test_single_tet_patches():
    mesh = TetMesh(UNIT_TET_NODES, [[0, 1, 2, 3]])
    for patch in build_node_patches(mesh):
        np.testing.assert_array_equal(patch.elems, [0])


def test_two_tet_patches():
    nodes = np.vstack([UNIT_TET_NODES, [[1.0, 1.0, 1.0]]])
    mesh = TetMesh(nodes, [[0, 1, 2, 3], [1, 2, 3, 4]])
    sizes = [len(p.elems) for p in build_node_patches(mesh)]
    assert sizes == [1, 2, 2, 2, 1]


def test_patch_sizes_sum_to_four_per_tet():
    mesh = jittered_box_mesh(cells=3, seed=11)
    patches = build_node_patches(mesh)
    assert sum(len(p.elems) for p in patches) == 4 * mesh.n_tets
    # membership both ways, by direct enumeration
    for patch in patches:
        for t in patch.elems:
            assert patch.node_id in mesh.tets[t]
    for t, tet in enumerate(mesh.tets):
        for node in tet:
            assert t in mesh.patch(node)


def test_locate_at_vertex(jittered_box):
    node = 13
    loc = locate_point(jittered_box, jittered_box.nodes[node])
    assert not loc.exterior
    slot = list(jittered_box.tets[loc.elem_id]).index(node)
    assert loc.bary[slot] == pytest.approx(1.0, abs=1e-9)


def test_locate_at_centroid(jittered_box):
    k = jittered_box.n_tets // 2
    centroid = jittered_box.nodes[jittered_box.tets[k]].mean(axis=0)
    loc = locate_point(jittered_box, centroid, seed=0)
    assert loc.elem_id == k
    np.testing.assert_allclose(loc.bary, 0.25, atol=1e-12)


def test_locate_exterior_matches_exhaustive(jittered_box):
    x = np.array([2.0, 2.0, 2.0])
    loc = locate_point(jittered_box, x)
    assert loc.exterior
    # brute-force oracle: the least-violating tet over the whole mesh
    best, best_tet = -np.inf, -1
    for t in range(jittered_box.n_tets):
        b = jittered_box.bary(x[None, :], np.array([t]))[0]
        if b.min() > best:
            best, best_tet = b.min(), t
    assert loc.elem_id == best_tet


def test_locate_reconstruction_and_bruteforce_agreement(rng, jittered_box):
    pts = rng.uniform(0.05, 0.95, size=(1000, 3))
    elems, bary, ext = locate_points(jittered_box, pts)
    assert not ext.any()
    assert np.abs(bary.sum(axis=1) - 1.0).max() < 1e-12
    rebuilt = np.einsum(
        "qi,qij->qj", bary, jittered_box.nodes[jittered_box.tets[elems]]
    )
    tol = 1e-10 * jittered_box.diameter
    assert np.abs(rebuilt - pts).max() < tol
    # same containment verdict as a full scan: the located tet must contain
    # the point, which is what the walk claims
    recheck = jittered_box.bary(pts, elems)
    assert recheck.min() >= -1e-10


def test_locate_seeded_walk_matches_unseeded(jittered_box, rng):
    pts = rng.uniform(0.1, 0.9, size=(50, 3))
    e0, b0, _ = locate_points(jittered_box, pts)
    # seed each query with the previous answer, as a sequential caller would
    seed = 0
    for p, expect_e in zip(pts, e0):
        loc = locate_point(jittered_box, p, seed=seed)
        seed = loc.elem_id
        got = jittered_box.bary(p[None], np.array([loc.elem_id]))[0]
        assert got.min() >= -1e-10


def test_mesh_arrays_read_only(small_box):
    with pytest.raises(ValueError):
        small_box.nodes[0, 0] = 7.0


def test_box_mesh_counts():
    mesh = box_tet_mesh(2)
    assert mesh.n_nodes == 27
    assert mesh.n_tets == 48
    assert mesh.volumes.sum() == pytest.approx(1.0, rel=1e-12)
