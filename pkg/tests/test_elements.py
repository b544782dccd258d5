import numpy as np
import pytest
from hypothesis import given, strategies as st

from archcal.elements import (body_load_vector, char_length, edge_load_vector, gauss_2d,
                              iface_geometry, quad8_dshape, quad8_geometry, quad8_shape,
                              tri6_geometry, tri6_shape)

QUAD_REF = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1], [0, -1], [1, 0], [0, 1], [-1, 0]], float)
TRI_REF = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]])


def _quad(x0=0.0, y0=0.0, a=2.0, b=1.0, shear=0.0):
    """Quad8 node coordinates of a parallelogram, midside nodes at edge centres."""
    c = np.array([[x0, y0], [x0 + a, y0], [x0 + a + shear, y0 + b], [x0 + shear, y0 + b]])
    mids = [(c[0] + c[1]) / 2, (c[1] + c[2]) / 2, (c[2] + c[3]) / 2, (c[3] + c[0]) / 2]
    return np.vstack([c, mids])


def test_gauss_2d_exact_for_degree_five():
    pts, wts = gauss_2d(3)
    assert np.sum(wts * pts[:, 0] ** 4 * pts[:, 1] ** 2) == pytest.approx(4 / 15)


@given(xi=st.floats(-1, 1), eta=st.floats(-1, 1))
def test_quad8_partition_of_unity(xi, eta):
    assert quad8_shape(xi, eta).sum() == pytest.approx(1.0)
    np.testing.assert_allclose(quad8_dshape(xi, eta).sum(axis=0), 0.0, atol=1e-12)


def test_quad8_kronecker():
    for k, (xi, eta) in enumerate(QUAD_REF):
        np.testing.assert_allclose(quad8_shape(xi, eta), np.eye(8)[k], atol=1e-14)


def test_quad8_derivatives_match_finite_differences():
    h = 1e-6
    for xi, eta in [(0.3, -0.7), (-0.1, 0.5)]:
        fd = np.column_stack([(quad8_shape(xi + h, eta) - quad8_shape(xi - h, eta)) / (2 * h),
                              (quad8_shape(xi, eta + h) - quad8_shape(xi, eta - h)) / (2 * h)])
        np.testing.assert_allclose(quad8_dshape(xi, eta), fd, atol=1e-8)


def test_tri6_kronecker():
    for k, (r, s) in enumerate(TRI_REF):
        np.testing.assert_allclose(tri6_shape(r, s), np.eye(6)[k], atol=1e-14)


@pytest.mark.parametrize("shear", [0.0, 0.7])
def test_quad8_area_and_linear_strain(shear):
    X = _quad(shear=shear)
    B, wdet, Nv, xg = quad8_geometry(X, np.arange(8)[None])
    assert wdet.sum() == pytest.approx(2.0)
    assert char_length(wdet)[0] == pytest.approx(np.sqrt(2.0))
    # u = G x reproduces a constant strain exactly
    G = np.array([[1e-3, 2e-3], [-4e-4, 5e-4]])
    u = (X @ G.T).ravel()
    eps = np.einsum("gij,j->gi", B[0], u)
    np.testing.assert_allclose(eps, [[G[0, 0], G[1, 1], G[0, 1] + G[1, 0]]] * 9, atol=1e-15)


def test_tri6_area_and_linear_strain():
    X = np.array([[0, 0], [3, 0], [0, 2], [1.5, 0], [1.5, 1], [0, 1]], float)
    B, wdet, _, _ = tri6_geometry(X, np.arange(6)[None])
    assert wdet.sum() == pytest.approx(3.0)
    u = np.column_stack([2e-3 * X[:, 1], 1e-3 * X[:, 0]]).ravel()
    eps = np.einsum("gij,j->gi", B[0], u)
    np.testing.assert_allclose(eps, [[0, 0, 3e-3]] * 3, atol=1e-15)


def test_inverted_element_rejected():
    X = _quad()[[1, 0, 3, 2, 4, 7, 6, 5]]
    with pytest.raises(ValueError, match="Jacobian"):
        quad8_geometry(X, np.arange(8)[None])


def test_iface_geometry_straight_segment():
    nodes = np.array([[0, 0], [2, 1.5], [4, 3], [0, 0], [2, 1.5], [4, 3]], float)
    rot, wt = iface_geometry(nodes, np.arange(6)[None])
    assert wt.sum() == pytest.approx(5.0)
    np.testing.assert_allclose(wt[0], np.array([1, 4, 1]) / 6 * 5.0)
    np.testing.assert_allclose(rot[0, 1, 1], [0.8, 0.6])  # tangent
    np.testing.assert_allclose(rot[0, 1, 0], [-0.6, 0.8])  # normal


def test_edge_and_body_loads_resultants():
    X = _quad(a=3.0, b=2.0, shear=0.5)
    f = edge_load_vector(X, np.array([[3, 6, 2]]), np.array([0.0, -1.5]), 16)
    assert f[1::2].sum() == pytest.approx(-1.5 * 3.0)
    assert f[0::2].sum() == pytest.approx(0.0)
    # consistent loads on a quadratic edge split 1/6, 4/6, 1/6
    np.testing.assert_allclose(f[[7, 5, 13]], -1.5 * 3.0 * np.array([1, 1, 4]) / 6)  # ends, mid
    B, wdet, Nv, _ = quad8_geometry(X, np.arange(8)[None])
    fb = body_load_vector(np.arange(8)[None], Nv, wdet, np.array([0.0, -2.0]), 16)
    assert fb[1::2].sum() == pytest.approx(-2.0 * 6.0)
