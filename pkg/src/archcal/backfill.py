"""Elastic-perfectly plastic Drucker-Prager cone for granular backfill.

``F = sqrt(J2) + eta * p - xi * c`` with ``p = I1 / 3`` (tension positive) and
a non-associated potential using ``eta_bar`` from the dilatancy coefficient.
The cone constants follow the plane-strain match to Mohr-Coulomb.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from numba import njit

B_E, B_NU, B_C, B_ETA, B_XI, B_ETAB = range(6)


@dataclass(frozen=True)
class BackfillParams:
    E: float
    nu: float
    c: float
    tan_phi: float
    tan_psi: float
    unit_weight: float  # kN/m3

    def __post_init__(self):
        if self.E <= 0 or not (0.0 <= self.nu < 0.5):
            raise ValueError("backfill needs E > 0 and 0 <= nu < 0.5")
        if self.c < 0:
            raise ValueError("backfill cohesion must be non-negative")
        if self.tan_psi > self.tan_phi:
            raise ValueError("dilatancy coefficient must not exceed friction coefficient")

    @staticmethod
    def plane_strain_constants(tan_angle: float) -> tuple[float, float]:
        den = math.sqrt(9.0 + 12.0 * tan_angle ** 2)
        return 3.0 * tan_angle / den, 3.0 / den

    @property
    def eta(self) -> float:
        return self.plane_strain_constants(self.tan_phi)[0]

    @property
    def xi(self) -> float:
        return self.plane_strain_constants(self.tan_phi)[1]

    @property
    def eta_bar(self) -> float:
        return self.plane_strain_constants(self.tan_psi)[0]

    def to_array(self) -> np.ndarray:
        return np.array([self.E, self.nu, self.c, self.eta, self.xi, self.eta_bar])

    def to_dict(self) -> dict:
        return asdict(self)


@njit(cache=True)
def dp_update(p, eps_p, eps):
    """Return (new plastic strain, stress, plastic flag); Voigt-6, engineering shear."""
    E = p[B_E]
    nu = p[B_NU]
    G = E / (2.0 * (1.0 + nu))
    K = E / (3.0 * (1.0 - 2.0 * nu))
    ee = eps - eps_p
    ev = ee[0] + ee[1] + ee[2]
    ptr = K * ev
    s = np.empty(6)
    for i in range(3):
        s[i] = 2.0 * G * (ee[i] - ev / 3.0)
        s[3 + i] = G * ee[3 + i]
    J2 = 0.5 * (s[0] ** 2 + s[1] ** 2 + s[2] ** 2) + s[3] ** 2 + s[4] ** 2 + s[5] ** 2
    sq = math.sqrt(J2)
    eta = p[B_ETA]
    xi = p[B_XI]
    etab = p[B_ETAB]
    c = p[B_C]
    F = sq + eta * ptr - xi * c
    sig = np.empty(6)
    if F <= 1e-12 * max(E * 1e-6, c):
        for i in range(3):
            sig[i] = s[i] + ptr
            sig[3 + i] = s[3 + i]
        return eps_p.copy(), sig, False
    dg = F / (G + K * eta * etab)
    new_ep = eps_p.copy()
    if sq - G * dg >= 0.0:
        fac = 1.0 - G * dg / sq
        pn = ptr - K * etab * dg
        for i in range(3):
            sig[i] = fac * s[i] + pn
            sig[3 + i] = fac * s[3 + i]
        # flow direction: s / (2 sqrt(J2)) + eta_bar / 3 I
        for i in range(3):
            new_ep[i] += dg * (s[i] / (2.0 * sq) + etab / 3.0)
            new_ep[3 + i] += dg * (s[3 + i] / sq)
        return new_ep, sig, True
    # apex: zero deviatoric stress, mean stress on the cone tip; the elastic
    # strain left after the return is purely volumetric
    pn = xi * c / eta if eta > 0.0 else ptr
    ev_e = pn / K
    for i in range(3):
        sig[i] = pn
        sig[3 + i] = 0.0
        new_ep[i] = eps[i] - ev_e / 3.0
        new_ep[3 + i] = eps[3 + i]
    return new_ep, sig, True


@njit(cache=True)
def dp_material(p, eps_p, eps, cols):
    new_ep, sig, plastic = dp_update(p, eps_p, eps)
    E = p[B_E]
    nu = p[B_NU]
    D = np.zeros((6, 6))
    if not plastic:
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        G = E / (2.0 * (1.0 + nu))
        for i in range(3):
            for j in range(3):
                D[i, j] = lam
            D[i, i] = lam + 2.0 * G
            D[3 + i, 3 + i] = G
        return new_ep, sig, D
    h = 1e-9
    for jj in range(cols.shape[0]):
        j = cols[jj]
        ep_ = eps.copy()
        ep_[j] += h
        em_ = eps.copy()
        em_[j] -= h
        _, sp, _ = dp_update(p, eps_p, ep_)
        _, sm, _ = dp_update(p, eps_p, em_)
        for i in range(6):
            D[i, j] = (sp[i] - sm[i]) / (2.0 * h)
    return new_ep, sig, D


def backfill_material(eps_p, eps, params: BackfillParams):
    """Update backfill point; returns ``(new_eps_p, stress, plane-strain tangent 3x3)``."""
    cols = np.array([0, 1, 3])
    new_ep, sig, D = dp_material(params.to_array(), np.asarray(eps_p, float),
                                 np.asarray(eps, float), cols)
    return new_ep, sig, D[np.ix_(cols, cols)]
