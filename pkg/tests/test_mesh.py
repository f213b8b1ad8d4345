"""Composite meshes: generators, split interfaces, quadrature, dof reduction."""

import numpy as np
import pytest

from stratovar.mesh import (
    CompositeMesh,
    DofMap,
    box_mesh,
    cell_quadrature,
    face_quadrature,
    layered_ball_mesh,
    locate_in_cell,
    read_mesh,
    shape_gradients,
    shape_values,
    write_mesh,
)


def test_shape_functions_partition_of_unity():
    rng = np.random.default_rng(0)
    xi = rng.uniform(-1.0, 1.0, (20, 3))
    N = shape_values(xi)
    assert np.max(np.abs(N.sum(axis=-1) - 1.0)) < 1e-14
    dN = shape_gradients(xi)
    assert np.max(np.abs(dN.sum(axis=-2))) < 1e-14


def test_welded_box_counts():
    m = box_mesh(n=2)
    assert m.n_nodes == 27
    assert len(m.cells) == 8
    assert m.n_geom == 27
    assert len(m.split_pairs) == 0
    assert m.validate()


def test_cell_quadrature_measures_volume():
    m = box_mesh(n=2, extent=1.0)
    vol = sum(cell_quadrature(m, c)["w"].sum() for c in range(len(m.cells)))
    assert vol == pytest.approx(1.0, rel=1e-13)


def test_split_interface_duplicates_midplane():
    m = box_mesh(n=2, interface="FS")
    # the 9 interface nodes exist twice; geometry is still shared
    assert m.n_nodes == 36
    assert m.n_geom == 27
    assert len(m.split_pairs) == 9
    tags = {f.tag for f in m.faces}
    assert "FS" in tags and "EXT" in tags
    for mn, pn in m.split_pairs:
        assert np.array_equal(m.nodes[mn], m.nodes[pn])
        assert m.geom_id[mn] == m.geom_id[pn]
    assert m.validate()


def test_interface_requires_even_resolution():
    with pytest.raises(ValueError):
        box_mesh(n=3, interface="SS")


def test_region_kind_validation():
    with pytest.raises(ValueError):
        box_mesh(n=2, interface="SS", kinds=("solid", "plasma"))


def test_welded_interface_splits_nothing():
    m = box_mesh(n=2, interface="SS")
    assert m.n_nodes == 27
    assert len(m.split_pairs) == 0
    assert {f.tag for f in m.faces} == {"SS", "EXT"}
    assert len(m.regions) == 2


def test_padded_box_adds_vacuum():
    m = box_mesh(n=2, pad=1)
    assert len(m.cells) == 64
    assert len(m.material_cells()) == 8
    assert "vacuum" in [r.name for r in m.regions]
    # potential support extends over the padding, displacement does not
    assert m.material_nodes().sum() == 27
    assert len(m.hull_geom_nodes()) == 5**3 - 3**3


def test_layered_ball_two_slipping_interfaces():
    m = layered_ball_mesh()  # solid / fluid / solid
    assert [r.kind for r in m.regions] == ["solid", "fluid", "solid"]
    fs_patches = {f.patch_id for f in m.faces if f.tag == "FS"}
    assert len(fs_patches) == 2
    # 26 surface-lattice nodes per slipping interface at n = 2
    assert len(m.split_pairs) == 52
    assert m.validate()
    # interface nodes sit exactly on their spheres
    for f in m.faces:
        if f.tag == "FS":
            R = m.patches[f.patch_id]["radius"]
            r = np.linalg.norm(m.nodes[f.minus_nodes], axis=1)
            assert np.max(np.abs(r - R)) < 1e-12


def test_layered_ball_welded_when_kinds_match():
    m = layered_ball_mesh(kinds=("solid", "solid", "solid"))
    assert len(m.split_pairs) == 0
    assert {f.tag for f in m.faces} == {"SS", "EXT"}


def test_sphere_face_quadrature_covers_interface():
    m = layered_ball_mesh()
    areas = {}
    for f in m.faces:
        q = face_quadrature(m, f, n=2)
        areas[(f.tag, f.patch_id)] = areas.get((f.tag, f.patch_id), 0.0) + q["w"].sum()
        # normals from the bound patch are unit and outward from minus
        assert np.max(np.abs(np.linalg.norm(q["nu"], axis=1) - 1.0)) < 1e-12
    for (tag, pid), area in areas.items():
        R = m.patches[pid]["radius"]
        assert abs(area / (4.0 * np.pi * R**2) - 1.0) < 0.02


def test_face_quadrature_carries_curvature():
    m = layered_ball_mesh()
    f = next(f for f in m.faces if f.tag == "FS")
    q = face_quadrature(m, f, n=2)
    R = m.patches[f.patch_id]["radius"]
    tr = np.trace(q["W"], axis1=1, axis2=2)
    assert np.max(np.abs(tr - 2.0 / R)) < 1e-10


def test_locate_in_cell_round_trip():
    m = layered_ball_mesh()
    rng = np.random.default_rng(1)
    xi = rng.uniform(-0.9, 0.9, (5, 3))
    for c in (0, len(m.cells) // 2):
        X = m.nodes[m.cells[c]]
        x = shape_values(xi) @ X
        back = locate_in_cell(m, c, x)
        assert np.max(np.abs(back - xi)) < 1e-10


def test_mesh_file_round_trip(tmp_path):
    m = layered_ball_mesh()
    path = tmp_path / "ball.mesh"
    write_mesh(m, path)
    m2 = read_mesh(path)
    assert np.array_equal(m.nodes, m2.nodes)
    assert np.array_equal(m.geom_id, m2.geom_id)
    assert np.array_equal(m.cells, m2.cells)
    assert np.array_equal(m.cell_region, m2.cell_region)
    assert [r.name for r in m.regions] == [r.name for r in m2.regions]
    assert np.array_equal(m.split_pairs, m2.split_pairs)
    assert len(m.faces) == len(m2.faces)
    assert m2.validate()
    # a second write is byte-identical
    path2 = tmp_path / "ball2.mesh"
    write_mesh(m2, path2)
    assert path.read_text() == path2.read_text()


def test_mesh_file_errors_cite_location(tmp_path):
    bad = tmp_path / "bad.mesh"
    bad.write_text("not a mesh\n")
    with pytest.raises(ValueError, match="not a mesh file"):
        read_mesh(bad)
    trunc = tmp_path / "trunc.mesh"
    trunc.write_text("stratovar-mesh 1\ncells 0\n")
    with pytest.raises(ValueError, match="expected 'nodes'"):
        read_mesh(trunc)


def test_dofmap_counts_on_split_box():
    m = box_mesh(n=2, interface="FS")
    dm = DofMap(m)
    # 27 welded-equivalent nodes keep 3 dofs, 9 plus nodes keep 2 tangential
    assert dm.n_u == 3 * 27 + 2 * 9
    # interior geometric nodes only; the hull is eliminated
    assert dm.n_phi == 1


def test_dofmap_slaves_normal_component():
    m = box_mesh(n=2, interface="FS")
    dm = DofMap(m)
    rng = np.random.default_rng(3)
    u = dm.expand_u(rng.standard_normal(dm.n_u))
    for mn, pn in m.split_pairs:
        nu, t1, t2 = dm.pair_tangents[pn]
        assert abs((u[pn] - u[mn]) @ nu) < 1e-14
    # tangential jumps are free: at least one pair moves
    jumps = [np.linalg.norm(u[pn] - u[mn]) for mn, pn in m.split_pairs]
    assert max(jumps) > 1e-3


def test_dofmap_reduce_inverts_expand():
    m = box_mesh(n=2, interface="FS")
    dm = DofMap(m)
    rng = np.random.default_rng(4)
    q = rng.standard_normal(dm.n_u)
    back = dm.reduce_u(dm.expand_u(q))
    assert np.max(np.abs(back - q)) < 1e-12


def test_dofmap_fixed_nodes():
    m = box_mesh(n=2)
    dm = DofMap(m, fixed_nodes=[0, 5])
    assert dm.n_u == 3 * 27 - 6
    u = dm.expand_u(np.ones(dm.n_u))
    assert np.max(np.abs(u[0])) == 0.0
    assert np.max(np.abs(u[5])) == 0.0


def test_dofmap_rejects_clamping_plus_node():
    m = box_mesh(n=2, interface="FS")
    plus = int(m.split_pairs[0][1])
    with pytest.raises(ValueError):
        DofMap(m, fixed_nodes=[plus])


def test_dofmap_expand_phi_zero_on_hull():
    m = box_mesh(n=2)
    dm = DofMap(m)
    phi = dm.expand_phi(np.ones(dm.n_phi))
    hull = m.hull_geom_nodes()
    assert np.max(np.abs(phi[list(hull)])) == 0.0
    assert phi.sum() == dm.n_phi


def test_composite_mesh_validate_catches_broken_pairs():
    m = box_mesh(n=2, interface="FS")
    nodes = m.nodes.copy()
    nodes[m.split_pairs[0][1]] += 0.1
    broken = CompositeMesh(
        nodes=nodes, cells=m.cells, cell_region=m.cell_region, regions=m.regions,
        faces=m.faces, patches=m.patches, geom_id=m.geom_id,
        split_pairs=m.split_pairs,
    )
    with pytest.raises(ValueError):
        broken.validate()
