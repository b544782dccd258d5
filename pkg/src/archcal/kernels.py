"""Compiled element loops: material updates, element forces and element tangents.

Every kernel returns per-element force vectors and (optionally) stiffness
blocks; the caller scatters them into global arrays in a fixed order so that
results are bit-reproducible.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .backfill import dp_material, dp_update
from .continuum import cdp_material, cdp_update, elastic_matrix, S_D, TANGENT_FLOOR
from .interface import iface_material, iface_update

PS_COLS = np.array([0, 1, 3])


@njit(cache=True)
def _gather(u, conn_e, ue):
    for a in range(conn_e.shape[0]):
        ue[2 * a] = u[2 * conn_e[a]]
        ue[2 * a + 1] = u[2 * conn_e[a] + 1]


@njit(cache=True)
def quad_cdp(conn, B, wdet, P, S_in, u, want_k, secant=False):
    """Damage-plasticity quads. Returns (fe, Ke, S_out, bad_element, n_numeric).

    With ``secant`` the tangent of yielding points is the damaged elastic
    stiffness, which removes Newton limit cycles at loading/unloading kinks.
    """
    ne, ng = wdet.shape
    nd = 2 * conn.shape[1]
    fe = np.zeros((ne, nd))
    Ke = np.zeros((ne if want_k else 1, nd, nd))
    S_out = S_in.copy()
    ue = np.empty(nd)
    eps = np.zeros(6)
    s3 = np.empty(3)
    D3 = np.empty((3, 3))
    cols = PS_COLS
    n_numeric = 0
    for e in range(ne):
        _gather(u, conn[e], ue)
        for g in range(ng):
            Bg = B[e, g]
            e3 = Bg @ ue
            eps[:] = 0.0
            eps[0] = e3[0]
            eps[1] = e3[1]
            eps[3] = e3[2]
            if want_k and secant:
                s, sig, plastic, ok, res = cdp_update(P[e], S_in[e, g], eps)
                if plastic:
                    dd = min(s[S_D], 1.0 - TANGENT_FLOOR)
                    nom = (1.0 - s[S_D]) * sig
                    Dt = (1.0 - dd) * elastic_matrix(P[e, 0], P[e, 1])
                else:
                    s, nom, Dt, ok, numeric = cdp_material(P[e], S_in[e, g], eps, cols)
            elif want_k:
                s, nom, Dt, ok, numeric = cdp_material(P[e], S_in[e, g], eps, cols)
                if numeric:
                    n_numeric += 1
            else:
                s, sig, plastic, ok, res = cdp_update(P[e], S_in[e, g], eps)
                nom = (1.0 - s[S_D]) * sig
                Dt = np.zeros((6, 6))
            if not ok:
                return fe, Ke, S_out, e, n_numeric
            S_out[e, g] = s
            for i in range(3):
                s3[i] = nom[cols[i]]
            w = wdet[e, g]
            fe[e] += (Bg.T @ s3) * w
            if want_k:
                for i in range(3):
                    for j in range(3):
                        D3[i, j] = Dt[cols[i], cols[j]]
                Ke[e] += (Bg.T @ D3 @ Bg) * w
    return fe, Ke, S_out, -1, n_numeric


@njit(cache=True)
def tri_dp(conn, B, wdet, P, S_in, u, want_k):
    """Drucker-Prager triangles; state is the plastic strain (6) per Gauss point."""
    ne, ng = wdet.shape
    nd = 2 * conn.shape[1]
    fe = np.zeros((ne, nd))
    Ke = np.zeros((ne if want_k else 1, nd, nd))
    S_out = S_in.copy()
    ue = np.empty(nd)
    eps = np.zeros(6)
    s3 = np.empty(3)
    D3 = np.empty((3, 3))
    cols = PS_COLS
    for e in range(ne):
        _gather(u, conn[e], ue)
        for g in range(ng):
            Bg = B[e, g]
            e3 = Bg @ ue
            eps[:] = 0.0
            eps[0] = e3[0]
            eps[1] = e3[1]
            eps[3] = e3[2]
            if want_k:
                ep, sig, Dt = dp_material(P[e], S_in[e, g], eps, cols)
            else:
                ep, sig, plastic = dp_update(P[e], S_in[e, g], eps)
                Dt = np.zeros((6, 6))
            S_out[e, g] = ep
            for i in range(3):
                s3[i] = sig[cols[i]]
            w = wdet[e, g]
            fe[e] += (Bg.T @ s3) * w
            if want_k:
                for i in range(3):
                    for j in range(3):
                        D3[i, j] = Dt[cols[i], cols[j]]
                Ke[e] += (Bg.T @ D3 @ Bg) * w
    return fe, Ke, S_out, -1


@njit(cache=True)
def iface6(conn, rot, wt, P, S_in, u, want_k):
    """Quadratic zero-thickness interfaces with nodal integration."""
    ne = conn.shape[0]
    fe = np.zeros((ne, 12))
    Ke = np.zeros((ne if want_k else 1, 12, 12))
    S_out = S_in.copy()
    ue = np.empty(12)
    jump = np.empty(2)
    dg = np.empty(2)
    for e in range(ne):
        _gather(u, conn[e], ue)
        for k in range(3):
            ia = 2 * k
            ib = 2 * (k + 3)
            dg[0] = ue[ib] - ue[ia]
            dg[1] = ue[ib + 1] - ue[ia + 1]
            R = rot[e, k]
            jump[0] = R[0, 0] * dg[0] + R[0, 1] * dg[1]
            jump[1] = R[1, 0] * dg[0] + R[1, 1] * dg[1]
            if want_k:
                s, nom, T, ok = iface_material(P[e], S_in[e, k], jump)
            else:
                s, eff, nom, plastic, ok = iface_update(P[e], S_in[e, k], jump)
                T = np.zeros((2, 2))
            if not ok:
                return fe, Ke, S_out, e
            S_out[e, k] = s
            w = wt[e, k]
            fg0 = (R[0, 0] * nom[0] + R[1, 0] * nom[1]) * w
            fg1 = (R[0, 1] * nom[0] + R[1, 1] * nom[1]) * w
            fe[e, ia] -= fg0
            fe[e, ia + 1] -= fg1
            fe[e, ib] += fg0
            fe[e, ib + 1] += fg1
            if want_k:
                Kg = (R.T @ T @ R) * w
                for i in range(2):
                    for j in range(2):
                        Ke[e, ia + i, ia + j] += Kg[i, j]
                        Ke[e, ib + i, ib + j] += Kg[i, j]
                        Ke[e, ia + i, ib + j] -= Kg[i, j]
                        Ke[e, ib + i, ia + j] -= Kg[i, j]
    return fe, Ke, S_out, -1


def elastic_plane_strain(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    G = E / (2 * (1 + nu))
    return np.array([[lam + 2 * G, lam, 0.0], [lam, lam + 2 * G, 0.0], [0.0, 0.0, G]])
