import numpy as np
import pytest

from archcal.continuum import ContinuumParams
from archcal.elements import edge_load_vector
from archcal.mesh import ArchGeometry, Mesh, annulus_area
from archcal.scenarios import CONTINUUM, build, resolve
from archcal.solver import (ElasticParams, LoadProtocol, Materials, Model, ResponseTrace,
                            solve_quasi_static, static_solve)


def grid_mesh(L, H, nx, ny, distort=0.0, seed=0):
    """Structured quad8 grid on [0, L] x [0, H]; interior corner nodes optionally jittered."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(0, L, 2 * nx + 1)
    ys = np.linspace(0, H, 2 * ny + 1)
    idx = -np.ones((2 * nx + 1, 2 * ny + 1), dtype=int)
    pts = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            if i % 2 and j % 2:
                continue
            idx[i, j] = len(pts)
            pts.append([x, y])
    pts = np.array(pts)
    if distort:
        for i in range(2, 2 * nx, 2):
            for j in range(2, 2 * ny, 2):
                pts[idx[i, j]] += rng.uniform(-distort, distort, 2) * [L / nx, H / ny]
    quads = []
    for a in range(nx):
        for b in range(ny):
            i, j = 2 * a, 2 * b
            c = [idx[i, j], idx[i + 2, j], idx[i + 2, j + 2], idx[i, j + 2]]
            m = [idx[i + 1, j], idx[i + 2, j + 1], idx[i + 1, j + 2], idx[i, j + 1]]
            quads.append(c + m)
    quads = np.array(quads)
    # straight-sided elements: midside nodes at the centre of their edge
    for q in quads:
        for k, (p0, p1) in enumerate(((0, 1), (1, 2), (2, 3), (3, 0))):
            pts[q[4 + k]] = 0.5 * (pts[q[p0]] + pts[q[p1]])
    boundary = np.unique(np.concatenate([idx[0], idx[-1], idx[:, 0], idx[:, -1]]))
    boundary = boundary[boundary >= 0]
    right = idx[-1][idx[-1] >= 0]
    left = idx[0][idx[0] >= 0]
    right_edges = np.array([[idx[-1, j], idx[-1, j + 1], idx[-1, j + 2]] for j in range(0, 2 * ny, 2)])
    mesh = Mesh(nodes=pts, quads=quads, quad_mat=["m"] * len(quads),
                node_sets={"left_springing": left, "right": right, "boundary": boundary})
    return mesh, right_edges


@pytest.mark.parametrize("material", ["elastic", "continuum"])
def test_patch_test_reproduces_linear_field(material):
    mesh, _ = grid_mesh(4.0, 3.0, 3, 3, distort=0.15, seed=2)
    E, nu = 3000.0, 0.2
    mat = (ElasticParams(E, nu) if material == "elastic"
           else ContinuumParams(**{**CONTINUUM["strong"], "E": E, "nu": nu}))
    model = Model(mesh, Materials(solids={"m": mat}))
    G = np.array([[2e-6, -1e-6], [3e-6, -4e-6]])  # well inside the elastic range
    u_exact = (mesh.nodes @ G.T).ravel()
    b = mesh.node_sets["boundary"]
    presc = np.sort(np.concatenate([2 * b, 2 * b + 1]))
    u, f_int, _, _ = static_solve(model, np.zeros(mesh.n_dof), presc, u_exact[presc])
    np.testing.assert_allclose(u, u_exact, atol=1e-14, rtol=1e-9)
    free = np.setdiff1d(np.arange(mesh.n_dof), presc)
    assert np.abs(f_int[free]).max() <= 1e-10 * np.abs(f_int).max()


def test_cantilever_tip_deflection():
    L, H, P = 1000.0, 100.0, 1.0  # P in N per mm width
    E, nu = 1000.0, 0.0
    mesh, edges = grid_mesh(L, H, 20, 4)
    model = Model(mesh, Materials(solids={"m": ElasticParams(E, nu)}))
    f = edge_load_vector(mesh.nodes, edges, np.array([0.0, -P / H]), mesh.n_dof)
    left = mesh.node_sets["left_springing"]
    presc = np.sort(np.concatenate([2 * left, 2 * left + 1]))
    u, _, _, _ = static_solve(model, f, presc, np.zeros(len(presc)))
    I = H ** 3 / 12
    G = E / 2
    expected = P * L ** 3 / (3 * E * I) + P * L / (5 / 6 * G * H)
    tip = u[2 * mesh.node_sets["right"] + 1].mean()
    assert -tip == pytest.approx(expected, rel=0.03)


def test_equilibrium_of_arch_self_weight():
    sc = resolve("bare-weak-hybrid")
    mesh, mats, _ = build(sc)
    model = Model(mesh, mats)
    g = model.gravity_vector()
    # total weight equals unit weight times annulus area on a 1 mm slice
    area = annulus_area(ArchGeometry(**sc.geometry.model_dump()))
    assert -g.sum() == pytest.approx(mats.unit_weight["masonry"] * 1e-6 * area, rel=1e-6)
    presc = model.support_dofs()
    u, f_int, _, _ = static_solve(model, g, presc, np.zeros(len(presc)))
    free = np.setdiff1d(np.arange(model.n_dof), presc)
    assert np.linalg.norm((f_int - g)[free]) <= 1e-6 * np.linalg.norm(g)
    # reactions carry the full weight
    ys = presc[presc % 2 == 1]
    assert (f_int - g)[ys].sum() == pytest.approx(-g.sum(), rel=1e-8)


def test_protocol_validation():
    with pytest.raises(ValueError):
        LoadProtocol(control_rate=0.0)
    with pytest.raises(ValueError):
        LoadProtocol(control_mode="force")


@pytest.fixture(scope="module")
def hybrid_run():
    mesh, mats, prot = build(resolve("bare-weak-hybrid"))
    return solve_quasi_static(mesh, mats, prot)


@pytest.mark.slow
def test_hybrid_run_converged_and_balanced(hybrid_run):
    res = hybrid_run
    assert res.status != "failed"
    assert max(s.residual_ratio for s in res.log) <= 1e-6
    assert max(s.reaction_balance for s in res.log) <= 1e-6
    F = np.asarray(res.trace.force)
    peak = int(np.argmax(F))
    assert 0 < peak < len(F) - 1  # a distinct peak followed by softening
    total = [d["total"] for d in res.dissipation]
    assert np.all(np.diff(total) >= -1e-9 * max(total))


@pytest.mark.slow
def test_trace_csv_roundtrip(tmp_path, hybrid_run):
    tr = hybrid_run.trace
    tr.write_csv(tmp_path / "t.csv")
    tr.write_partition_csv(tmp_path / "p.csv")
    back = ResponseTrace.read_csv(tmp_path / "t.csv", tmp_path / "p.csv")
    np.testing.assert_array_equal(back.force, tr.force)
    np.testing.assert_array_equal(back.d1, tr.d1)
    for name in tr.part_force:
        np.testing.assert_array_equal(back.partition(name)[1], tr.partition(name)[1])
