"""Isotropic damage-plasticity material point for homogenised masonry.

Effective stresses follow a non-associated plasticity problem with a
Lubliner/Lee-Fenves style yield surface and a hyperbolic Drucker-Prager flow
potential; nominal stresses are obtained with a scalar damage variable that
combines tensile and compressive damage through stiffness-recovery weights.

All tensors use 6-component Voigt vectors ordered ``[xx, yy, zz, xy, yz, xz]``
with engineering shear strains. Plane strain is obtained by the caller
setting ``eps_zz = eps_yz = eps_xz = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit

# parameter vector layout used by the compiled kernels
P_E, P_NU, P_FB0, P_FY, P_PSI, P_ECC, P_KC, P_FT0, P_FCMAX, P_GT, P_MU, \
    P_KFC, P_RHOC, P_WC, P_WT, P_LCH = range(16)
N_PARAM = 16

# state vector layout: plastic strain (6), kappa_t, kappa_c, d_t, d_c, d, total strain (6)
S_EPSP = 0
S_KT = 6
S_KC = 7
S_DT = 8
S_DC = 9
S_D = 10
S_EPS = 11
N_STATE = 17

# compressive softening dissipates this multiple of G_t per crack band
COMP_ENERGY_FACTOR = 50.0
# lower bound on the effective tensile strength, relative to f_t0
FT_FLOOR = 1e-3
TANGENT_FLOOR = 1e-6
MAX_LOCAL_ITER = 50
PLANE_STRAIN_IDX = np.array([0, 1, 3])


class ReturnMapError(RuntimeError):
    """Local plastic problem did not converge; the caller should cut the step."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ContinuumParams:
    E: float
    nu: float
    fb0_ratio: float
    fy_ratio: float
    psi: float  # degrees
    ecc: float
    Kc: float
    ft: float
    fc_max: float
    Gt: float
    mu: float
    kappa_c_fc: float
    rho_c: float
    wc: float
    wt: float

    def __post_init__(self):
        if not (self.E > 0 and -1.0 < self.nu < 0.5):
            raise ValueError("E must be positive and nu in (-1, 0.5)")
        if not (1.0 < self.fb0_ratio < 1.5):
            raise ValueError(f"fb0_ratio={self.fb0_ratio} outside (1, 1.5)")
        if not (0.5 < self.Kc <= 1.0):
            raise ValueError(f"Kc={self.Kc} outside (0.5, 1]")
        for name in ("wc", "wt", "fy_ratio", "rho_c"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not (0.0 < self.mu <= 1.0):
            # mu = 0 would freeze kappa_t (history is driven by plastic strain)
            raise ValueError(f"mu={self.mu} outside (0, 1]")
        if not (0.0 <= self.psi < 56.3):
            raise ValueError(f"psi={self.psi} outside [0, 56.3) degrees")
        if self.fy_ratio <= 0.0:
            raise ValueError("fy_ratio must be positive")
        if min(self.ft, self.fc_max, self.Gt, self.kappa_c_fc) <= 0.0:
            raise ValueError("strengths, Gt and kappa_c_fc must be positive")
        if self.ecc < 0.0:
            raise ValueError("ecc must be non-negative")

    @property
    def alpha(self) -> float:
        return (self.fb0_ratio - 1.0) / (2.0 * self.fb0_ratio - 1.0)

    @property
    def gamma(self) -> float:
        return 3.0 * (1.0 - self.Kc) / (2.0 * self.Kc - 1.0)

    @property
    def fc0(self) -> float:
        return self.fy_ratio * self.fc_max

    def to_array(self, lch: float = 1.0) -> np.ndarray:
        return np.array([self.E, self.nu, self.fb0_ratio, self.fy_ratio, self.psi,
                         self.ecc, self.Kc, self.ft, self.fc_max, self.Gt, self.mu,
                         self.kappa_c_fc, self.rho_c, self.wc, self.wt, lch])

    def replace(self, **changes) -> "ContinuumParams":
        data = asdict(self)
        data.update(changes)
        return ContinuumParams(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ContinuumState:
    eps_p: np.ndarray = field(default_factory=lambda: np.zeros(6))
    kappa_t: float = 0.0
    kappa_c: float = 0.0
    d_t: float = 0.0
    d_c: float = 0.0
    d: float = 0.0
    eps: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def to_array(self) -> np.ndarray:
        a = np.zeros(N_STATE)
        a[S_EPSP:S_EPSP + 6] = self.eps_p
        a[S_KT], a[S_KC] = self.kappa_t, self.kappa_c
        a[S_DT], a[S_DC], a[S_D] = self.d_t, self.d_c, self.d
        a[S_EPS:S_EPS + 6] = self.eps
        return a

    @classmethod
    def from_array(cls, a: np.ndarray) -> "ContinuumState":
        return cls(eps_p=a[S_EPSP:S_EPSP + 6].copy(), kappa_t=float(a[S_KT]),
                   kappa_c=float(a[S_KC]), d_t=float(a[S_DT]), d_c=float(a[S_DC]),
                   d=float(a[S_D]), eps=a[S_EPS:S_EPS + 6].copy())


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _alpha(p):
    return (p[P_FB0] - 1.0) / (2.0 * p[P_FB0] - 1.0)


@njit(cache=True)
def _gamma(p):
    return 3.0 * (1.0 - p[P_KC]) / (2.0 * p[P_KC] - 1.0)


@njit(cache=True)
def elastic_matrix(E, nu):
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    G = E / (2.0 * (1.0 + nu))
    C = np.zeros((6, 6))
    for i in range(3):
        for j in range(3):
            C[i, j] = lam
        C[i, i] = lam + 2.0 * G
        C[3 + i, 3 + i] = G
    return C


@njit(cache=True)
def tension_law(kt, p):
    """Effective tensile strength and tensile damage for history kt."""
    ft0 = p[P_FT0]
    mu = p[P_MU]
    eck = kt / mu
    eref = p[P_GT] / (p[P_LCH] * ft0)
    fnom = ft0 * math.exp(-eck / eref)
    fbar = fnom + p[P_E] * (1.0 - mu) * eck
    if fbar < FT_FLOOR * ft0:
        fbar = FT_FLOOR * ft0
    dt = 1.0 - fnom / fbar
    if dt < 0.0:
        dt = 0.0
    return fbar, dt


@njit(cache=True)
def compression_law(kc, p):
    """Effective compressive strength (positive magnitude) and compressive damage."""
    fcmax = p[P_FCMAX]
    fc0 = p[P_FY] * fcmax
    kfc = p[P_KFC]
    x = kc / kfc
    if x < 1.0:
        fbar = fc0 + (fcmax - fc0) * (2.0 * x - x * x)
    else:
        fbar = fcmax
    kd = p[P_RHOC] * kfc
    ku = kfc + 2.0 * COMP_ENERGY_FACTOR * p[P_GT] / (p[P_LCH] * fcmax)
    if kc <= kd:
        dc = 0.0
    else:
        dc = (kc - kd) / (ku - kd)
        if dc > 1.0:
            dc = 1.0
    return fbar, dc


@njit(cache=True)
def stress_ratio(sp):
    """r = sum<s_i> / sum|s_i| over principal stresses, 0 at zero stress."""
    num = 0.0
    den = 0.0
    for i in range(3):
        if sp[i] > 0.0:
            num += sp[i]
        den += abs(sp[i])
    if den == 0.0:
        return 0.0
    return num / den


@njit(cache=True)
def combine_damage(r, dt, dc, wt, wc):
    st = 1.0 - wt * r
    sc = 1.0 - wc * (1.0 - r)
    return 1.0 - (1.0 - st * dc) * (1.0 - sc * dt)


@njit(cache=True)
def yield_principal(sp, kt, kc, p):
    """Yield function on principal effective stresses sp (any order)."""
    alpha = _alpha(p)
    gamma = _gamma(p)
    I1 = sp[0] + sp[1] + sp[2]
    m = I1 / 3.0
    J2 = 0.5 * ((sp[0] - m) ** 2 + (sp[1] - m) ** 2 + (sp[2] - m) ** 2)
    q = math.sqrt(3.0 * J2)
    fbt, _ = tension_law(kt, p)
    fbc, _ = compression_law(kc, p)
    beta = fbc / fbt * (1.0 - alpha) - (1.0 + alpha)
    smax = max(sp[0], max(sp[1], sp[2]))
    F = alpha * I1 + q + beta * max(smax, 0.0) - gamma * max(-smax, 0.0)
    return F / (1.0 - alpha) - fbc


@njit(cache=True)
def _flow_principal(sp, p):
    """Principal components of dG/dsigma for the hyperbolic DP potential."""
    tpsi = math.tan(math.radians(p[P_PSI]))
    a = p[P_ECC] * p[P_FT0] * tpsi
    m = (sp[0] + sp[1] + sp[2]) / 3.0
    J2 = 0.5 * ((sp[0] - m) ** 2 + (sp[1] - m) ** 2 + (sp[2] - m) ** 2)
    rho = math.sqrt(a * a + 3.0 * J2)
    out = np.empty(3)
    for i in range(3):
        if rho > 0.0:
            out[i] = 1.5 * (sp[i] - m) / rho + tpsi / 3.0
        else:
            out[i] = tpsi / 3.0
    return out


@njit(cache=True)
def _residual(x, str_, kt0, kc0, p, G, K):
    sp = x[0:3]
    lam = x[3]
    kt = x[4]
    kc = x[5]
    tpsi = math.tan(math.radians(p[P_PSI]))
    mflow = _flow_principal(sp, p)
    mmean = (mflow[0] + mflow[1] + mflow[2]) / 3.0
    fs = p[P_FCMAX]
    es = fs / p[P_E]
    R = np.empty(6)
    for i in range(3):
        R[i] = (sp[i] - str_[i] + lam * (2.0 * G * (mflow[i] - mmean) + K * tpsi)) / fs
    r = stress_ratio(sp)
    imax = 0
    imin = 0
    for i in range(1, 3):
        if sp[i] > sp[imax]:
            imax = i
        if sp[i] < sp[imin]:
            imin = i
    dkt = lam * r * max(mflow[imax], 0.0)
    dkc = -lam * (1.0 - r) * min(mflow[imin], 0.0)
    R[3] = yield_principal(sp, kt, kc, p) / fs
    R[4] = (kt - kt0 - dkt) / es
    R[5] = (kc - kc0 - dkc) / es
    return R


@njit(cache=True)
def _solve_local(str_, kt0, kc0, p, G, K):
    """Newton solve of the principal-space return; returns (x, ok, resnorm)."""
    x = np.empty(6)
    x[0:3] = str_
    x[3] = 0.0
    x[4] = kt0
    x[5] = kc0
    fs = p[P_FCMAX]
    es = fs / p[P_E]
    scale = np.array([fs, fs, fs, es, es, es])
    R = _residual(x, str_, kt0, kc0, p, G, K)
    rn = np.sqrt(np.sum(R * R))
    J = np.empty((6, 6))
    for it in range(MAX_LOCAL_ITER):
        if rn < 1e-12:
            return x, True, rn
        for j in range(6):
            h = 1e-7 * max(abs(x[j]), scale[j])
            xp = x.copy()
            xp[j] += h
            Rp = _residual(xp, str_, kt0, kc0, p, G, K)
            xm = x.copy()
            xm[j] -= h
            Rm = _residual(xm, str_, kt0, kc0, p, G, K)
            for i in range(6):
                J[i, j] = (Rp[i] - Rm[i]) / (2.0 * h)
        dx = np.linalg.solve(J, -R)
        step = 1.0
        ok = False
        for _ls in range(12):
            xt = x + step * dx
            if xt[3] < 0.0:
                xt[3] = 0.0
            if xt[4] < kt0:
                xt[4] = kt0
            if xt[5] < kc0:
                xt[5] = kc0
            Rt = _residual(xt, str_, kt0, kc0, p, G, K)
            rt = np.sqrt(np.sum(Rt * Rt))
            if rt < rn or rt < 1e-12:
                ok = True
                break
            step *= 0.5
        if not ok:
            # accept the full step anyway; kinks can make the merit non-monotone
            xt = x + dx
            Rt = _residual(xt, str_, kt0, kc0, p, G, K)
            rt = np.sqrt(np.sum(Rt * Rt))
        x = xt
        R = Rt
        rn = rt
    return x, rn < 1e-12, rn


@njit(cache=True)
def _voigt_to_tensor(v, engineering):
    f = 0.5 if engineering else 1.0
    T = np.empty((3, 3))
    T[0, 0] = v[0]
    T[1, 1] = v[1]
    T[2, 2] = v[2]
    T[0, 1] = T[1, 0] = f * v[3]
    T[1, 2] = T[2, 1] = f * v[4]
    T[0, 2] = T[2, 0] = f * v[5]
    return T


@njit(cache=True)
def _tensor_to_voigt(T, engineering):
    f = 2.0 if engineering else 1.0
    v = np.empty(6)
    v[0] = T[0, 0]
    v[1] = T[1, 1]
    v[2] = T[2, 2]
    v[3] = f * T[0, 1]
    v[4] = f * T[1, 2]
    v[5] = f * T[0, 2]
    return v


@njit(cache=True)
def _update_single(p, s_in, eps):
    """One backward-Euler update from s_in to total strain eps.

    Returns (state_out, sig_eff, plastic, ok, residual).
    """
    E = p[P_E]
    nu = p[P_NU]
    G = E / (2.0 * (1.0 + nu))
    K = E / (3.0 * (1.0 - 2.0 * nu))
    C = elastic_matrix(E, nu)
    s_out = s_in.copy()
    s_out[S_EPS:S_EPS + 6] = eps
    epsp = s_in[S_EPSP:S_EPSP + 6]
    kt0 = s_in[S_KT]
    kc0 = s_in[S_KC]
    sig_tr = C @ (eps - epsp)
    T = _voigt_to_tensor(sig_tr, False)
    w, V = np.linalg.eigh(T)
    Ftr = yield_principal(w, kt0, kc0, p)
    tol = 1e-10 * p[P_FCMAX]
    if Ftr <= tol:
        sig = sig_tr
        sp = w
        plastic = False
        res = 0.0
        ok = True
    else:
        x, ok, res = _solve_local(w, kt0, kc0, p, G, K)
        sp = x[0:3]
        lam = x[3]
        mflow = _flow_principal(sp, p)
        D = np.zeros((3, 3))
        S = np.zeros((3, 3))
        for i in range(3):
            D[i, i] = lam * mflow[i]
            S[i, i] = sp[i]
        dep = _tensor_to_voigt(V @ D @ V.T, True)
        sig = _tensor_to_voigt(V @ S @ V.T, False)
        s_out[S_EPSP:S_EPSP + 6] = epsp + dep
        s_out[S_KT] = x[4]
        s_out[S_KC] = x[5]
        plastic = True
    _, dt = tension_law(s_out[S_KT], p)
    _, dc = compression_law(s_out[S_KC], p)
    # damage indices never decrease
    dt = max(dt, s_in[S_DT])
    dc = max(dc, s_in[S_DC])
    r = stress_ratio(sp)
    s_out[S_DT] = dt
    s_out[S_DC] = dc
    s_out[S_D] = combine_damage(r, dt, dc, p[P_WT], p[P_WC])
    return s_out, sig, plastic, ok, res


@njit(cache=True)
def cdp_update(p, s_in, eps):
    """Update with automatic sub-incrementation; returns (state, sig_eff, plastic, ok, res)."""
    s_out, sig, plastic, ok, res = _update_single(p, s_in, eps)
    if ok:
        return s_out, sig, plastic, ok, res
    eps0 = s_in[S_EPS:S_EPS + 6]
    nsub = 2
    while nsub <= 64:
        s = s_in.copy()
        good = True
        for k in range(1, nsub + 1):
            e = eps0 + (eps - eps0) * (k / nsub)
            s, sig, plastic, ok, res = _update_single(p, s, e)
            if not ok:
                good = False
                break
        if good:
            return s, sig, True, True, res
        nsub *= 2
    return s_out, sig, plastic, False, res




@njit(cache=True)
def _damage_gradient(sig, s_out, p):
    """Gradient of the combined damage with respect to the effective stress.

    Returned in Voigt stress form, so ``g @ dsig`` is the damage increment.
    """
    T = _voigt_to_tensor(sig, False)
    w, V = np.linalg.eigh(T)
    dt = s_out[S_DT]
    dc = s_out[S_DC]
    wt = p[P_WT]
    wc = p[P_WC]
    g = np.zeros(6)
    num = 0.0
    den = 0.0
    for i in range(3):
        if w[i] > 0.0:
            num += w[i]
        den += abs(w[i])
    if den == 0.0 or (wt * dc == 0.0 and wc * dt == 0.0):
        return g
    r = num / den
    A = 1.0 - (1.0 - wt * r) * dc
    B = 1.0 - (1.0 - wc * (1.0 - r)) * dt
    dd_dr = -(wt * dc * B - wc * dt * A)
    for i in range(3):
        h = 1.0 if w[i] > 0.0 else 0.0
        sg = 1.0 if w[i] > 0.0 else (-1.0 if w[i] < 0.0 else 0.0)
        dr = (h * den - num * sg) / (den * den)
        n = V[:, i]
        g[0] += dd_dr * dr * n[0] * n[0]
        g[1] += dd_dr * dr * n[1] * n[1]
        g[2] += dd_dr * dr * n[2] * n[2]
        g[3] += dd_dr * dr * 2.0 * n[0] * n[1]
        g[4] += dd_dr * dr * 2.0 * n[1] * n[2]
        g[5] += dd_dr * dr * 2.0 * n[0] * n[2]
    return g


@njit(cache=True)
def cdp_material(p, s_in, eps, cols):
    """Full material-point update.

    Returns (state_out, nominal stress, tangent, ok, numeric) where the tangent
    is the 6x6 derivative of nominal stress w.r.t. engineering strain; for
    plastic steps only the columns listed in ``cols`` are filled, by central
    differences of the complete update (``numeric`` is then True).
    """
    s_out, sig, plastic, ok, res = cdp_update(p, s_in, eps)
    d = s_out[S_D]
    nom = (1.0 - d) * sig
    C = elastic_matrix(p[P_E], p[P_NU])
    Dt = np.zeros((6, 6))
    numeric = False
    if not ok:
        return s_out, nom, Dt, ok, numeric
    if 1.0 - d < TANGENT_FLOOR:
        return s_out, nom, TANGENT_FLOOR * C, ok, numeric
    if not plastic:
        g = _damage_gradient(sig, s_out, p)
        gC = g @ C
        for i in range(6):
            for j in range(6):
                Dt[i, j] = (1.0 - d) * C[i, j] - sig[i] * gC[j]
        return s_out, nom, Dt, ok, numeric
    numeric = True
    h = 1e-4 * p[P_FT0] / p[P_E]
    for jj in range(cols.shape[0]):
        j = cols[jj]
        ep = eps.copy()
        ep[j] += h
        sp_, sgp, _, okp, _ = cdp_update(p, s_in, ep)
        em = eps.copy()
        em[j] -= h
        sm_, sgm, _, okm, _ = cdp_update(p, s_in, em)
        for i in range(6):
            Dt[i, j] = ((1.0 - sp_[S_D]) * sgp[i] - (1.0 - sm_[S_D]) * sgm[i]) / (2.0 * h)
    return s_out, nom, Dt, ok, numeric


# ---------------------------------------------------------------------------
# Python-facing operations
# ---------------------------------------------------------------------------

def _as_voigt(sig) -> np.ndarray:
    a = np.asarray(sig, dtype=float)
    if a.shape == (3, 3):
        return np.array([a[0, 0], a[1, 1], a[2, 2], a[0, 1], a[1, 2], a[0, 2]])
    if a.shape == (6,):
        return a.copy()
    raise ValueError(f"stress must be 3x3 or Voigt-6, got shape {a.shape}")


def principal_stresses(sig) -> np.ndarray:
    v = _as_voigt(sig)
    return np.linalg.eigvalsh(_voigt_to_tensor(v, False))


def yield_value(sig_eff, kappa, p: ContinuumParams, lch: float = 1.0) -> float:
    """Yield function at effective stress ``sig_eff`` and history ``(kappa_t, kappa_c)``."""
    kt, kc = kappa
    return float(yield_principal(principal_stresses(sig_eff), float(kt), float(kc),
                                 p.to_array(lch)))


def beta_value(kappa, p: ContinuumParams, lch: float = 1.0) -> float:
    pa = p.to_array(lch)
    fbt, _ = tension_law(float(kappa[0]), pa)
    fbc, _ = compression_law(float(kappa[1]), pa)
    return fbc / fbt * (1.0 - p.alpha) - (1.0 + p.alpha)


def return_map(state: ContinuumState, eps_total, p: ContinuumParams,
               lch: float = 1.0) -> tuple[ContinuumState, np.ndarray]:
    """Backward-Euler update to total strain ``eps_total`` (Voigt-6, engineering shear).

    Raises ReturnMapError if the local problem fails even with sub-incrementation.
    """
    s_out, sig, _, ok, res = cdp_update(p.to_array(lch), state.to_array(),
                                        np.asarray(eps_total, dtype=float))
    if not ok:
        raise ReturnMapError(f"local return map did not converge (residual {res:.3e})", res)
    return ContinuumState.from_array(s_out), sig


def damage_update(sig_eff, state: ContinuumState, p: ContinuumParams) -> float:
    """Combined damage from the current d_t, d_c and the effective stress state."""
    r = stress_ratio(principal_stresses(sig_eff))
    return float(combine_damage(r, state.d_t, state.d_c, p.wt, p.wc))


def nominal_stress(sig_eff, d: float) -> np.ndarray:
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"damage {d} outside [0, 1]")
    return (1.0 - d) * np.asarray(sig_eff, dtype=float)


def shear_strength(kappa, p: ContinuumParams, lch: float = 1.0) -> tuple[float, float]:
    """Effective and nominal pure-shear strength for history ``(kappa_t, kappa_c)``."""
    pa = p.to_array(lch)
    kt, kc = float(kappa[0]), float(kappa[1])
    fbc, dc = compression_law(kc, pa)
    _, dt = tension_law(kt, pa)
    eff = (1.0 - p.alpha) / (math.sqrt(3.0) + beta_value((kt, kc), p, lch)) * abs(fbc)
    d = combine_damage(0.5, dt, dc, p.wt, p.wc)
    return eff, (1.0 - d) * eff


def consistent_tangent(state: ContinuumState, eps_total, p: ContinuumParams,
                       lch: float = 1.0, plane_strain: bool = True):
    """Tangent of nominal stress w.r.t. strain at the update from ``state`` to ``eps_total``.

    Returns ``(tangent, numeric)``; the tangent is 3x3 in ``[xx, yy, xy]`` for
    plane strain, else 6x6. ``numeric`` flags the perturbation fallback used
    for plastic steps.
    """
    cols = PLANE_STRAIN_IDX if plane_strain else np.arange(6)
    s_out, _, Dt, ok, numeric = cdp_material(p.to_array(lch), state.to_array(),
                                             np.asarray(eps_total, dtype=float), cols)
    if not ok:
        raise ReturnMapError("local return map did not converge")
    if plane_strain:
        return Dt[np.ix_(PLANE_STRAIN_IDX, PLANE_STRAIN_IDX)], bool(numeric)
    return Dt, bool(numeric)
