import numpy as np
import pytest

from archcal.elements import quad8_geometry, tri6_geometry
from archcal.mesh import (ArchGeometry, Mesh, MeshError, annulus_area, brick_area,
                          connected_components, generate_backfill, generate_macroscale_arch,
                          generate_mesoscale_arch, read_vtk, write_vtk)

GEOM = ArchGeometry()


@pytest.fixture(scope="module")
def meso():
    return generate_mesoscale_arch(GEOM)


@pytest.fixture(scope="module")
def hybrid():
    return generate_macroscale_arch(GEOM, hybrid=True)


def test_circular_segment_geometry():
    R = GEOM.radius
    assert R == pytest.approx((2500 ** 2 + 1250 ** 2) / 2500)
    x, y = GEOM.point(GEOM.half_angle, R)
    assert (x, y) == pytest.approx((5000.0, 0.0), abs=1e-9)
    assert GEOM.brick_height == pytest.approx((330 - 20) / 3)


def test_geometry_validation():
    with pytest.raises(MeshError):
        ArchGeometry(rise=3000.0)
    with pytest.raises(MeshError):
        ArchGeometry(n_rings=0)


def test_meso_bricks_separated_by_joints(meso):
    n_bricks = sum(k + 1 for k in meso.meta["radial_joints_per_ring"])
    assert connected_components(meso) == n_bricks
    assert connected_components(meso, include_interfaces=True) == 1
    kinds = np.array(meso.iface_kind)
    assert set(kinds) == {"radial", "circumferential"}


def test_meso_area_fills_annulus(meso):
    assert brick_area(meso) == pytest.approx(annulus_area(GEOM), rel=1e-6)
    _, wdet, _, _ = quad8_geometry(meso.nodes, meso.quads)
    assert (wdet > 0).all()


def test_interfaces_zero_thickness(meso, hybrid):
    for m in (meso, hybrid):
        a = m.nodes[m.ifaces[:, :3]]
        b = m.nodes[m.ifaces[:, 3:]]
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert not np.any(m.ifaces[:, :3] == m.ifaces[:, 3:])


def test_hybrid_mid_thickness_interface(hybrid):
    assert len(hybrid.quads) == 80
    assert len(hybrid.ifaces) == 40
    assert set(hybrid.iface_kind) == {"circumferential"}
    xc, yc = GEOM.centre
    r = np.hypot(*(hybrid.nodes[hybrid.ifaces[:, :3].ravel()] - [xc, yc]).T)
    np.testing.assert_allclose(r, GEOM.radius, rtol=1e-12)
    assert connected_components(hybrid) == 2
    assert connected_components(hybrid, include_interfaces=True) == 1


def test_macro_without_interfaces():
    m = generate_macroscale_arch(GEOM)
    assert len(m.ifaces) == 0 and connected_components(m) == 1
    assert brick_area(m) == pytest.approx(annulus_area(GEOM), rel=1e-6)


def test_macro_mesh_validation():
    with pytest.raises(MeshError):
        generate_macroscale_arch(GEOM, n_thk=1)
    with pytest.raises(MeshError):
        generate_macroscale_arch(GEOM, n_thk=3, hybrid=True)


def test_dof_reduction(meso, hybrid):
    assert hybrid.n_dof <= 0.10 * meso.n_dof


def test_load_patches_and_monitors(meso):
    for name, xc in (("L4", 1250.0), ("3L4", 3750.0)):
        patch = meso.load_patches[name]
        assert patch["centre"] == pytest.approx(xc)
        X = meso.nodes[patch["edges"]]
        assert X[..., 0].min() < xc < X[..., 0].max()
        # patches lie on the extrados
        assert set(patch["edges"].ravel()) <= set(meso.node_sets["extrados"])
    d1 = meso.nodes[meso.node_sets["monitor_d1"][0]]
    assert d1[0] == pytest.approx(1250.0, abs=60.0)
    assert set(meso.node_sets["monitor_d1"]) <= set(meso.node_sets["intrados"])


def test_springings_fixed_sets(meso):
    left = meso.nodes[meso.node_sets["left_springing"]]
    right = meso.nodes[meso.node_sets["right_springing"]]
    assert len(left) >= 3 and len(right) >= 3
    assert left[:, 0].max() < 200 and right[:, 0].min() > 4800


def test_backfill_mesh(meso):
    m = generate_backfill(meso, GEOM)
    assert len(m.tris) > 0
    _, wdet, _, _ = tri6_geometry(m.nodes, m.tris)
    assert (wdet > 0).all()
    assert "extrados" in set(m.iface_kind)
    assert connected_components(m, include_interfaces=True) == 1
    with pytest.raises(MeshError):
        generate_backfill(meso, GEOM, cover=0.0)


def test_json_roundtrip(tmp_path, hybrid):
    hybrid.save_json(tmp_path / "m.json")
    back = Mesh.load_json(tmp_path / "m.json")
    np.testing.assert_array_equal(back.nodes, hybrid.nodes)
    np.testing.assert_array_equal(back.ifaces, hybrid.ifaces)
    assert back.iface_kind == hybrid.iface_kind
    np.testing.assert_array_equal(back.load_patches["L4"]["edges"], hybrid.load_patches["L4"]["edges"])


def test_vtk_roundtrip(tmp_path, hybrid):
    u = np.arange(hybrid.n_dof, dtype=float) * 1e-3
    d = np.linspace(0, 1, len(hybrid.quads) + len(hybrid.ifaces))
    write_vtk(hybrid, tmp_path / "m.vtk", point_vectors={"displacement": u.reshape(-1, 2)},
              cell_scalars={"d": d})
    data = read_vtk(tmp_path / "m.vtk")
    np.testing.assert_allclose(data["points"][:, :2], hybrid.nodes)
    np.testing.assert_allclose(data["cell_scalars"]["d"], d)
    np.testing.assert_allclose(data["point_vectors"]["displacement"][:, :2], u.reshape(-1, 2))
    assert sorted(set(data["types"])) == [21, 23]
