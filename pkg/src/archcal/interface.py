"""Cohesive-frictional traction-separation law for zero-thickness joints.

Three yield surfaces act on the effective traction ``(sigma, tau)``:
a tension cut-off with linear hardening ``q``, a Coulomb shear surface whose
cohesion grows once ``q`` passes ``q_lim``, and a compression cap. The shear
flow is non-associated (dilatancy coefficient ``tan_phi_g``). Damage indices
are driven by the plastic work spent in each mode, normalised by the mode's
fracture energy.

Damage reduces the tensile normal traction and the cohesive share of the
shear traction; compressive contact and Coulomb friction are retained.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
from numba import njit

I_KN, I_KT, I_FT, I_FC, I_C, I_TPHI, I_TPHIG, I_GT, I_GS, I_GC = range(10)
N_IPARAM = 10

# state layout
J_DPN, J_DPT, J_Q, J_WPT, J_WPS, J_WPC, J_DN, J_DT, J_JN, J_JT, J_WFR = range(11)
N_ISTATE = 11

MAX_SWAPS = 8


class InterfaceReturnError(RuntimeError):
    """Active-set cycling did not settle; the caller should cut the step."""


@dataclass(frozen=True)
class InterfaceParams:
    kn: float
    kt: float
    ft: float
    fc: float
    c: float
    tan_phi: float
    tan_phi_g: float
    Gt: float
    Gs: float
    Gc: float

    def __post_init__(self):
        if self.kn <= 0 or self.kt <= 0:
            raise ValueError("interface stiffnesses must be positive")
        if self.tan_phi <= 0:
            raise ValueError("tan_phi must be positive")
        if self.ft > self.c / self.tan_phi + 1e-12:
            raise ValueError(f"ft={self.ft} exceeds c/tan_phi={self.c / self.tan_phi}")
        if self.tan_phi_g > self.tan_phi:
            raise ValueError("tan_phi_g must not exceed tan_phi")
        if min(self.Gt, self.Gs, self.Gc) <= 0:
            raise ValueError("fracture energies must be positive")
        if self.ft < 0 or self.fc <= 0 or self.c < 0:
            raise ValueError("strengths must be non-negative (fc positive)")

    @property
    def q_lim(self) -> float:
        return self.c / self.tan_phi - self.ft

    def to_array(self) -> np.ndarray:
        return np.array([self.kn, self.kt, self.ft, self.fc, self.c, self.tan_phi,
                         self.tan_phi_g, self.Gt, self.Gs, self.Gc])

    def replace(self, **changes) -> "InterfaceParams":
        data = asdict(self)
        data.update(changes)
        return InterfaceParams(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class InterfaceState:
    eps_p: np.ndarray = field(default_factory=lambda: np.zeros(2))
    q: float = 0.0
    W_pt: float = 0.0
    W_ps: float = 0.0
    W_pc: float = 0.0
    D_n: float = 0.0
    D_t: float = 0.0
    jump: np.ndarray = field(default_factory=lambda: np.zeros(2))
    W_fric: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.eps_p[0], self.eps_p[1], self.q, self.W_pt, self.W_ps,
                         self.W_pc, self.D_n, self.D_t, self.jump[0], self.jump[1],
                         self.W_fric])

    @classmethod
    def from_array(cls, a) -> "InterfaceState":
        return cls(eps_p=np.array(a[0:2], dtype=float), q=float(a[J_Q]),
                   W_pt=float(a[J_WPT]), W_ps=float(a[J_WPS]), W_pc=float(a[J_WPC]),
                   D_n=float(a[J_DN]), D_t=float(a[J_DT]),
                   jump=np.array(a[J_JN:J_JT + 1], dtype=float), W_fric=float(a[J_WFR]))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _hardening_modulus(p):
    qlim = p[I_C] / p[I_TPHI] - p[I_FT]
    if qlim <= 0.0 or p[I_FT] <= 0.0:
        return 0.0
    # q reaches q_lim after a plastic opening of G_t / f_t
    return qlim * p[I_FT] / p[I_GT]


@njit(cache=True)
def cohesion(q, p):
    qlim = p[I_C] / p[I_TPHI] - p[I_FT]
    if q <= qlim:
        return p[I_C]
    return p[I_C] + (q - qlim) * p[I_TPHI]


@njit(cache=True)
def surfaces(sig, tau, q, p):
    Fs = abs(tau) + sig * p[I_TPHI] - cohesion(q, p)
    Ft = sig - (p[I_FT] + q)
    Fc = -sig - p[I_FC]
    return Fs, Ft, Fc


@njit(cache=True)
def _trial_after(lam, act, st, tt, q0, p, H):
    # lam[0]: tension, lam[1]: shear, lam[2]: compression
    lt = lam[0] if act[0] else 0.0
    ls = lam[1] if act[1] else 0.0
    lc = lam[2] if act[2] else 0.0
    sgn = 1.0 if tt >= 0.0 else -1.0
    sig = st - p[I_KN] * (lt + ls * p[I_TPHIG] - lc)
    tau = tt - p[I_KT] * ls * sgn
    q = q0 + H * lt
    return sig, tau, q


@njit(cache=True)
def _active_residual(lam, act, st, tt, q0, p, H):
    sig, tau, q = _trial_after(lam, act, st, tt, q0, p, H)
    Fs, Ft, Fc = surfaces(sig, tau, q, p)
    R = np.zeros(3)
    R[0] = Ft if act[0] else lam[0]
    R[1] = Fs if act[1] else lam[1]
    R[2] = Fc if act[2] else lam[2]
    return R


@njit(cache=True)
def _solve_active(act, st, tt, q0, p, H):
    lam = np.zeros(3)
    J = np.zeros((3, 3))
    sc = max(p[I_FT], p[I_C], 1e-6)
    for it in range(30):
        R = _active_residual(lam, act, st, tt, q0, p, H)
        if np.max(np.abs(R)) < 1e-13 * sc and it > 0:
            return lam, True
        for j in range(3):
            h = 1e-9
            lp = lam.copy()
            lp[j] += h
            lm = lam.copy()
            lm[j] -= h
            Rp = _active_residual(lp, act, st, tt, q0, p, H)
            Rm = _active_residual(lm, act, st, tt, q0, p, H)
            for i in range(3):
                J[i, j] = (Rp[i] - Rm[i]) / (2.0 * h)
        if abs(np.linalg.det(J)) < 1e-300:
            return lam, False
        lam = lam - np.linalg.solve(J, R)
    R = _active_residual(lam, act, st, tt, q0, p, H)
    return lam, np.max(np.abs(R)) < 1e-10 * sc


@njit(cache=True)
def _apex_return(st, tt, q0, p, H):
    lam = np.zeros(3)
    ls = abs(tt) / p[I_KT]
    lt = (st - p[I_KN] * ls * p[I_TPHIG] - p[I_FT] - q0) / (p[I_KN] + H)
    if lt < 0.0:
        return lam, False
    lam[0] = lt
    lam[1] = ls
    act = np.ones(3, dtype=np.bool_)
    act[2] = False
    sig, tau, q = _trial_after(lam, act, st, tt, q0, p, H)
    Fs, Ft, Fc = surfaces(sig, tau, q, p)
    sc = max(p[I_FT], p[I_C], 1e-6)
    return lam, abs(Ft) < 1e-10 * sc and Fs < 1e-10 * sc


@njit(cache=True)
def _implicit_ratio(w_old, a, G, d_floor, e):
    """Work/damage update: W = w_old + (1 - D) a + e (D - d_floor) with D = max(d_floor, W / G).

    ``a`` is the plastic work at undamaged traction and ``e`` the elastic energy
    that damage releases, so a monotonic path dissipates exactly G.
    """
    if a <= 0.0:
        return w_old, max(d_floor, min(w_old / G, 1.0))
    e = min(e, 0.9 * G)
    d = (w_old + a - e * d_floor) / (G + a - e)
    if d >= d_floor:
        d = min(d, 1.0)
        return w_old + (1.0 - d) * a + e * (d - d_floor), d
    w = w_old + (1.0 - d_floor) * a
    return w, max(d_floor, min(w / G, 1.0))


@njit(cache=True)
def nominal_traction(sig, tau, Dn, Dt, p):
    sn = (1.0 - Dn) * sig if sig > 0.0 else sig
    fric = max(-sig, 0.0) * p[I_TPHI]
    at = abs(tau)
    tf = min(at, fric)
    tn = tf + (1.0 - Dt) * (at - tf)
    if tau < 0.0:
        tn = -tn
    return sn, tn


@njit(cache=True)
def iface_update(p, s_in, jump):
    """Return (state_out, effective traction (2,), nominal traction (2,), plastic, ok)."""
    kn = p[I_KN]
    kt = p[I_KT]
    H = _hardening_modulus(p)
    s = s_in.copy()
    s[J_JN] = jump[0]
    s[J_JT] = jump[1]
    st = kn * (jump[0] - s_in[J_DPN])
    tt = kt * (jump[1] - s_in[J_DPT])
    q0 = s_in[J_Q]
    Fs, Ft, Fc = surfaces(st, tt, q0, p)
    sc = max(p[I_FT], p[I_C], p[I_FC])
    tol = 1e-10 * sc
    eff = np.empty(2)
    nom = np.empty(2)
    if Fs <= tol and Ft <= tol and Fc <= tol:
        eff[0] = st
        eff[1] = tt
        sn, tn = nominal_traction(st, tt, s_in[J_DN], s_in[J_DT], p)
        nom[0] = sn
        nom[1] = tn
        return s, eff, nom, False, True
    act = np.zeros(3, dtype=np.bool_)
    act[0] = Ft > tol
    act[1] = Fs > tol
    act[2] = Fc > tol
    if act[0] and act[2]:
        act[2] = False
    ok = False
    lam = np.zeros(3)
    for swap in range(MAX_SWAPS + 1):
        lam, conv = _solve_active(act, st, tt, q0, p, H)
        if not conv and act[0] and act[1]:
            # beyond q_lim the cut-off passes through the shear apex; return
            # to the apex (tau = 0) where both surfaces vanish together
            lam, conv = _apex_return(st, tt, q0, p, H)
            if not conv:
                act[1] = False
                lam, conv = _solve_active(act, st, tt, q0, p, H)
            elif act[2]:
                act[2] = False
        sig, tau, q = _trial_after(lam, act, st, tt, q0, p, H)
        Fs2, Ft2, Fc2 = surfaces(sig, tau, q, p)
        changed = False
        for k in range(3):
            if act[k] and lam[k] < -1e-14:
                act[k] = False
                changed = True
        if not changed:
            if Ft2 > 1e-8 * sc and not act[0]:
                act[0] = True
                changed = True
            if Fs2 > 1e-8 * sc and not act[1]:
                act[1] = True
                changed = True
            if Fc2 > 1e-8 * sc and not act[2]:
                act[2] = True
                changed = True
        if not changed and conv:
            ok = True
            break
    if not ok:
        eff[0] = st
        eff[1] = tt
        nom[0] = st
        nom[1] = tt
        return s, eff, nom, True, False
    lt = lam[0] if act[0] else 0.0
    ls = lam[1] if act[1] else 0.0
    lc = lam[2] if act[2] else 0.0
    sgn = 1.0 if tt >= 0.0 else -1.0
    s[J_DPN] = s_in[J_DPN] + lt + ls * p[I_TPHIG] - lc
    s[J_DPT] = s_in[J_DPT] + ls * sgn
    s[J_Q] = q
    eff[0] = sig
    eff[1] = tau
    # plastic work split by the surface that produced each increment
    spos = max(sig, 0.0)
    fric = max(-sig, 0.0) * p[I_TPHI]
    tcoh = max(abs(tau) - fric, 0.0)
    a_t = spos * lt
    a_s = tcoh * ls + spos * ls * p[I_TPHIG]
    a_c = max(-sig, 0.0) * lc
    e_t = 0.5 * spos * spos / kn
    e_s = 0.5 * tcoh * tcoh / kt
    wpt, dn_t = _implicit_ratio(s_in[J_WPT], a_t, p[I_GT], s_in[J_DN], e_t)
    dt_floor = max(s_in[J_DT], min(wpt / p[I_GT], 1.0))
    wps, dt_new = _implicit_ratio(s_in[J_WPS], a_s, p[I_GS], dt_floor, e_s)
    s[J_WPT] = wpt
    s[J_WPS] = wps
    s[J_WPC] = s_in[J_WPC] + a_c
    s[J_WFR] = s_in[J_WFR] + min(abs(tau), fric) * ls
    s[J_DN] = max(s_in[J_DN], dn_t)
    s[J_DT] = max(dt_new, s[J_DN]) if p[I_GT] > 0.0 else dt_new
    sn, tn = nominal_traction(sig, tau, s[J_DN], s[J_DT], p)
    nom[0] = sn
    nom[1] = tn
    return s, eff, nom, True, True


@njit(cache=True)
def iface_material(p, s_in, jump):
    """Update plus 2x2 tangent of nominal traction w.r.t. the jump."""
    s, eff, nom, plastic, ok = iface_update(p, s_in, jump)
    T = np.zeros((2, 2))
    if not ok:
        return s, nom, T, ok
    if not plastic and s_in[J_DN] == 0.0 and s_in[J_DT] == 0.0:
        T[0, 0] = p[I_KN]
        T[1, 1] = p[I_KT]
        return s, nom, T, ok
    scale = max(p[I_FT], p[I_C], 1e-3)
    for j in range(2):
        h = 1e-6 * scale / (p[I_KN] if j == 0 else p[I_KT])
        jp = jump.copy()
        jp[j] += h
        jm = jump.copy()
        jm[j] -= h
        _, _, np_, _, _ = iface_update(p, s_in, jp)
        _, _, nm_, _, _ = iface_update(p, s_in, jm)
        for i in range(2):
            T[i, j] = (np_[i] - nm_[i]) / (2.0 * h)
    # stabilise fully damaged points; softening (negative) slopes are kept
    if abs(T[0, 0]) < 1e-6 * p[I_KN]:
        T[0, 0] = 1e-6 * p[I_KN]
    if abs(T[1, 1]) < 1e-6 * p[I_KT]:
        T[1, 1] = 1e-6 * p[I_KT]
    return s, nom, T, ok


# ---------------------------------------------------------------------------
# Python-facing operations
# ---------------------------------------------------------------------------

def surface_values(traction, q: float, p: InterfaceParams) -> tuple[float, float, float]:
    """``(F_s, F_t, F_c)`` at effective traction ``(sigma, tau)``."""
    return surfaces(float(traction[0]), float(traction[1]), float(q), p.to_array())


def interface_return_map(state: InterfaceState, jump, p: InterfaceParams):
    """Update to relative displacement ``jump = (normal, tangential)``.

    Returns ``(new_state, effective_traction)``.
    """
    s, eff, _, _, ok = iface_update(p.to_array(), state.to_array(),
                                    np.asarray(jump, dtype=float))
    if not ok:
        raise InterfaceReturnError("multi-surface active set did not settle")
    return InterfaceState.from_array(s), eff


def interface_damage(state: InterfaceState, p: InterfaceParams) -> tuple[float, float]:
    """Damage indices implied by the accumulated plastic works."""
    r_t = min(max(state.W_pt / p.Gt, 0.0), 1.0)
    r_s = min(max(state.W_ps / p.Gs, 0.0), 1.0)
    D_n = max(state.D_n, r_t)
    D_t = max(state.D_t, r_s, r_t)
    return D_n, D_t


def interface_nominal(traction, state: InterfaceState, p: InterfaceParams) -> np.ndarray:
    return np.array(nominal_traction(float(traction[0]), float(traction[1]),
                                     state.D_n, state.D_t, p.to_array()))


def interface_tangent(state: InterfaceState, jump, p: InterfaceParams) -> np.ndarray:
    _, _, T, ok = iface_material(p.to_array(), state.to_array(), np.asarray(jump, dtype=float))
    if not ok:
        raise InterfaceReturnError("multi-surface active set did not settle")
    return T
