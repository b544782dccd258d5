"""Shape functions, quadrature rules and geometric precomputation for quad8, tri6 and iface6."""
from __future__ import annotations

import math

import numpy as np


def gauss_1d(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gauss_2d(n: int):
    x, w = gauss_1d(n)
    pts = np.array([(a, b) for b in x for a in x])
    wts = np.array([wa * wb for wb in w for wa in w])
    return pts, wts


def tri_gauss3():
    pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
    wts = np.full(3, 1 / 6)
    return pts, wts


def quad8_shape(xi: float, eta: float) -> np.ndarray:
    c = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    N = np.empty(8)
    for k in range(4):
        a, b = c[k]
        N[k] = 0.25 * (1 + a * xi) * (1 + b * eta) * (a * xi + b * eta - 1)
    N[4] = 0.5 * (1 - xi ** 2) * (1 - eta)
    N[5] = 0.5 * (1 + xi) * (1 - eta ** 2)
    N[6] = 0.5 * (1 - xi ** 2) * (1 + eta)
    N[7] = 0.5 * (1 - xi) * (1 - eta ** 2)
    return N


def quad8_dshape(xi: float, eta: float) -> np.ndarray:
    """Derivatives ``dN/d(xi, eta)`` with shape ``(8, 2)``."""
    c = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    d = np.empty((8, 2))
    for k in range(4):
        a, b = c[k]
        d[k, 0] = 0.25 * a * (1 + b * eta) * (2 * a * xi + b * eta)
        d[k, 1] = 0.25 * b * (1 + a * xi) * (a * xi + 2 * b * eta)
    d[4] = [-xi * (1 - eta), -0.5 * (1 - xi ** 2)]
    d[5] = [0.5 * (1 - eta ** 2), -(1 + xi) * eta]
    d[6] = [-xi * (1 + eta), 0.5 * (1 - xi ** 2)]
    d[7] = [-0.5 * (1 - eta ** 2), -(1 - xi) * eta]
    return d


def tri6_shape(r: float, s: float) -> np.ndarray:
    t = 1.0 - r - s
    return np.array([t * (2 * t - 1), r * (2 * r - 1), s * (2 * s - 1),
                     4 * r * t, 4 * r * s, 4 * s * t])


def tri6_dshape(r: float, s: float) -> np.ndarray:
    t = 1.0 - r - s
    return np.array([[-(4 * t - 1), -(4 * t - 1)],
                     [4 * r - 1, 0.0],
                     [0.0, 4 * s - 1],
                     [4 * (t - r), -4 * r],
                     [4 * s, 4 * r],
                     [-4 * s, 4 * (t - s)]])


def _bmatrices(X: np.ndarray, dshape, shape, pts, wts):
    """Per element and Gauss point: B (3 x 2n), weight*detJ, shape values, Gauss coords."""
    ne, nn, _ = X.shape
    ng = len(pts)
    B = np.zeros((ne, ng, 3, 2 * nn))
    wdet = np.zeros((ne, ng))
    Nv = np.zeros((ng, nn))
    xg = np.zeros((ne, ng, 2))
    for g, ((a, b), w) in enumerate(zip(pts, wts)):
        dN = dshape(a, b)
        Nv[g] = shape(a, b)
        J = np.einsum("ak,eaj->ekj", dN, X)  # J[e, k, j] = dx_j / dxi_k
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0):
            bad = int(np.argmin(det))
            raise ValueError(f"non-positive Jacobian in element {bad}")
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        dNx = np.einsum("ejk,ak->eaj", inv, dN)  # dN/dx_j
        B[:, g, 0, 0::2] = dNx[:, :, 0]
        B[:, g, 1, 1::2] = dNx[:, :, 1]
        B[:, g, 2, 0::2] = dNx[:, :, 1]
        B[:, g, 2, 1::2] = dNx[:, :, 0]
        wdet[:, g] = w * det
        xg[:, g] = Nv[g] @ X
    return B, wdet, Nv, xg


def quad8_geometry(nodes: np.ndarray, conn: np.ndarray):
    pts, wts = gauss_2d(3)
    return _bmatrices(nodes[conn], quad8_dshape, quad8_shape, pts, wts)


def tri6_geometry(nodes: np.ndarray, conn: np.ndarray):
    pts, wts = tri_gauss3()
    return _bmatrices(nodes[conn], tri6_dshape, tri6_shape, pts, wts)


# iface6: nodal (Newton-Cotes / Simpson) integration at xi = -1, 0, 1
IFACE_XI = np.array([-1.0, 0.0, 1.0])
IFACE_W = np.array([1.0, 4.0, 1.0]) / 3.0


def iface_geometry(nodes: np.ndarray, conn: np.ndarray):
    """Return ``(rot, weight)``: local frames ``(ne, 3, 2, 2)`` rows ``[n, t]`` and nodal weights (mm)."""
    ne = len(conn)
    rot = np.zeros((ne, 3, 2, 2))
    wt = np.zeros((ne, 3))
    Xa = nodes[conn[:, :3]]
    for k, xi in enumerate(IFACE_XI):
        dN = np.array([xi - 0.5, -2.0 * xi, xi + 0.5])
        tvec = np.einsum("a,eaj->ej", dN, Xa)
        jac = np.linalg.norm(tvec, axis=1)
        if np.any(jac <= 0):
            raise ValueError("degenerate interface element")
        t = tvec / jac[:, None]
        n = np.stack([-t[:, 1], t[:, 0]], axis=1)
        rot[:, k, 0] = n
        rot[:, k, 1] = t
        wt[:, k] = IFACE_W[k] * jac
    return rot, wt


def char_length(wdet: np.ndarray) -> np.ndarray:
    """Crack-band width per element: square root of the element area."""
    return np.sqrt(wdet.sum(axis=1))


def edge_load_vector(nodes: np.ndarray, edges: np.ndarray, traction: np.ndarray,
                     n_dof: int) -> np.ndarray:
    """Consistent nodal forces for a constant traction (force per length) on quadratic edges."""
    f = np.zeros(n_dof)
    g, w = gauss_1d(3)
    for e in edges:
        X = nodes[list(e)]
        for xi, wi in zip(g, w):
            N = np.array([0.5 * xi * (xi - 1), 1 - xi ** 2, 0.5 * xi * (xi + 1)])
            dN = np.array([xi - 0.5, -2.0 * xi, xi + 0.5])
            jac = math.hypot(*(dN @ X))
            for a in range(3):
                f[2 * e[a]:2 * e[a] + 2] += wi * jac * N[a] * traction
    return f


def body_load_vector(conn: np.ndarray, Nv: np.ndarray, wdet: np.ndarray,
                     body: np.ndarray, n_dof: int) -> np.ndarray:
    """Nodal forces from a constant body force ``body`` (force per volume) on every element."""
    f = np.zeros(n_dof)
    nodal = np.einsum("ga,eg->ea", Nv, wdet)  # integral of N_a over each element
    for comp in range(2):
        np.add.at(f, 2 * conn + comp, nodal * body[comp])
    return f
