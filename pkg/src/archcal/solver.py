"""Quasi-static nonlinear solution of arch models under preload plus patch displacement control."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elements as el
from .backfill import BackfillParams
from .continuum import N_STATE, S_D, S_DT, S_EPS, S_EPSP, elastic_matrix
from .interface import N_ISTATE, J_DN, J_DT, J_WPT, J_WPS, J_WPC, J_WFR
from .kernels import quad_cdp, tri_dp, iface6, elastic_plane_strain
from .mesh import Mesh, write_vtk

log = logging.getLogger(__name__)

TRACE_HEADER = ["step", "time_s", "F_kN_per_m", "d1_mm", "d2_mm"]


class SolverError(RuntimeError):
    pass


class PreloadError(SolverError):
    """Stage-1 loads could not be equilibrated."""


class BoundaryConditionError(SolverError):
    pass


@dataclass(frozen=True)
class ElasticParams:
    E: float
    nu: float

    def __post_init__(self):
        if self.E <= 0 or not (-1.0 < self.nu < 0.5):
            raise ValueError("elastic solid needs E > 0 and -1 < nu < 0.5")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Materials:
    """Material assignment by mesh material id.

    ``solids`` maps quad/triangle material ids to elastic, damage-plasticity or
    Drucker-Prager parameters; ``unit_weight`` is in kN/m3.
    """
    solids: dict
    interfaces: dict = field(default_factory=dict)
    unit_weight: dict = field(default_factory=dict)


@dataclass
class Preload:
    patch: str
    force: float  # kN/m of width, downward positive
    steps: int = 4


@dataclass
class LoadProtocol:
    gravity: bool = False
    preloads: list = field(default_factory=list)
    gravity_steps: int = 2
    controlled_patch: str = "L4"
    control_rate: float = 0.1  # mm per step
    velocity: float = 0.1  # mm/s, converts controlled displacement to pseudo-time
    max_steps: int = 400
    drop_fraction: float = 0.5
    max_displacement: float = 60.0
    min_step_fraction: float = 1.0 / 64.0
    max_iter: int = 20
    tol_force: float = 1e-6
    tol_energy: float = 1e-8
    partitions: list | None = None  # patch ids with force/displacement channels
    checkpoint_every: int = 0
    monitors: tuple = ("monitor_d1", "monitor_d2")
    control_mode: str = "rigid"  # "rigid": uniform patch displacement; "pressure": uniform patch load

    def __post_init__(self):
        if self.control_rate <= 0:
            raise ValueError("control_rate must be positive")
        if self.control_mode not in ("pressure", "rigid"):
            raise ValueError(f"unknown control_mode {self.control_mode!r}")
        if not self.controlled_patch:
            raise ValueError("exactly one controlled patch is required")
        self.preloads = [p if isinstance(p, Preload) else Preload(**p) for p in self.preloads]

    @property
    def partition_patches(self) -> list:
        if self.partitions is not None:
            return list(self.partitions)
        names = [self.controlled_patch]
        names += [p.patch for p in self.preloads if p.patch not in names]
        return names


@dataclass
class ResponseTrace:
    step: list = field(default_factory=list)
    time: list = field(default_factory=list)
    force: list = field(default_factory=list)
    d1: list = field(default_factory=list)
    d2: list = field(default_factory=list)
    part_force: dict = field(default_factory=dict)
    part_disp: dict = field(default_factory=dict)
    status: str = "running"

    def append(self, step, t, F, d1, d2, pf: dict, pu: dict):
        if self.time and t <= self.time[-1]:
            raise SolverError("pseudo-time must increase strictly")
        self.step.append(int(step))
        self.time.append(float(t))
        self.force.append(float(F))
        self.d1.append(float(d1))
        self.d2.append(float(d2))
        for k in pf:
            self.part_force.setdefault(k, []).append(float(pf[k]))
            self.part_disp.setdefault(k, []).append(float(pu[k]))

    def __len__(self):
        return len(self.time)

    @property
    def peak_force(self) -> float:
        return max(self.force) if self.force else float("nan")

    def arrays(self) -> dict:
        out = {"time": np.asarray(self.time), "force": np.asarray(self.force),
               "d1": np.asarray(self.d1), "d2": np.asarray(self.d2)}
        return out

    def partition(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(time, force, displacement)`` channels of one load partition."""
        if name not in self.part_force:
            raise KeyError(f"trace has no partition {name!r}")
        return (np.asarray(self.time), np.asarray(self.part_force[name]),
                np.asarray(self.part_disp[name]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for row in zip(self.step, self.time, self.force, self.d1, self.d2):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    def write_partition_csv(self, path) -> None:
        names = list(self.part_force)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time_s"] + [f"{n}_{c}" for n in names for c in ("F_kN_per_m", "u_mm")])
            for i, (s, t) in enumerate(zip(self.step, self.time)):
                vals = []
                for n in names:
                    vals += [repr(float(self.part_force[n][i])), repr(float(self.part_disp[n][i]))]
                w.writerow([s, repr(float(t))] + vals)

    @classmethod
    def read_csv(cls, path, partition_path=None) -> "ResponseTrace":
        tr = cls(status="loaded")
        with open(path) as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header")
        for r in rows[1:]:
            tr.step.append(int(r[0]))
            tr.time.append(float(r[1]))
            tr.force.append(float(r[2]))
            tr.d1.append(float(r[3]))
            tr.d2.append(float(r[4]))
        if partition_path is not None:
            with open(partition_path) as fh:
                prow = list(csv.reader(fh))
            head = prow[0][2:]
            names = [h[:-len("_F_kN_per_m")] for h in head[0::2]]
            for n in names:
                tr.part_force[n] = []
                tr.part_disp[n] = []
            for r in prow[1:]:
                for k, n in enumerate(names):
                    tr.part_force[n].append(float(r[2 + 2 * k]))
                    tr.part_disp[n].append(float(r[3 + 2 * k]))
        return tr

    def to_dict(self) -> dict:
        return {"step": self.step, "time": self.time, "force": self.force, "d1": self.d1,
                "d2": self.d2, "part_force": self.part_force, "part_disp": self.part_disp,
                "status": self.status}

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseTrace":
        return cls(step=list(d["step"]), time=list(d["time"]), force=list(d["force"]),
                   d1=list(d["d1"]), d2=list(d["d2"]), part_force=dict(d["part_force"]),
                   part_disp=dict(d["part_disp"]), status=d.get("status", "loaded"))


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------

def _edofs(conn: np.ndarray) -> np.ndarray:
    ed = np.empty((conn.shape[0], 2 * conn.shape[1]), dtype=np.int64)
    ed[:, 0::2] = 2 * conn
    ed[:, 1::2] = 2 * conn + 1
    return ed


class Model:
    """Discretised system: element groups, parameters, sparse pattern and load vectors."""

    def __init__(self, mesh: Mesh, materials: Materials):
        self.mesh = mesh
        self.materials = materials
        self.n_dof = mesh.n_dof
        nodes = mesh.nodes
        quad_kind = []
        for m in mesh.quad_mat:
            if m not in materials.solids:
                raise BoundaryConditionError(f"no material for quad material id {m!r}")
            quad_kind.append(type(materials.solids[m]))
        quad_kind = np.array([k.__name__ for k in quad_kind]) if quad_kind else np.zeros(0, str)
        for name in set(quad_kind.tolist()):
            if name not in ("ElasticParams", "ContinuumParams"):
                raise BoundaryConditionError(f"quads cannot use {name}")
        if len(mesh.quads):
            B, wdet, Nv, xg = el.quad8_geometry(nodes, mesh.quads)
        else:
            B = np.zeros((0, 9, 3, 16)); wdet = np.zeros((0, 9)); Nv = np.zeros((9, 8)); xg = np.zeros((0, 9, 2))
        self.quad_B, self.quad_wdet, self.quad_N, self.quad_xg = B, wdet, Nv, xg
        self.cdp_idx = np.where(quad_kind == "ContinuumParams")[0]
        self.el_idx = np.where(quad_kind == "ElasticParams")[0]
        lch = el.char_length(wdet) if len(wdet) else np.zeros(0)
        self.quad_lch = lch
        self.cdp_P = np.array([materials.solids[mesh.quad_mat[e]].to_array(lch[e])
                               for e in self.cdp_idx]).reshape(-1, 16)
        self.cdp_conn = mesh.quads[self.cdp_idx]
        self.cdp_B = np.ascontiguousarray(B[self.cdp_idx])
        self.cdp_wdet = np.ascontiguousarray(wdet[self.cdp_idx])
        # elastic quads: constant stiffness
        self.el_D = np.array([elastic_plane_strain(materials.solids[mesh.quad_mat[e]].E,
                                                   materials.solids[mesh.quad_mat[e]].nu)
                              for e in self.el_idx]).reshape(-1, 3, 3)
        Be = B[self.el_idx]
        self.el_Ke = np.einsum("egia,eij,egjb,eg->eab", Be, self.el_D, Be, wdet[self.el_idx]) \
            if len(self.el_idx) else np.zeros((0, 16, 16))
        # triangles
        if len(mesh.tris):
            for m in set(mesh.tri_mat):
                if not isinstance(materials.solids.get(m), BackfillParams):
                    raise BoundaryConditionError(f"triangles need backfill parameters for {m!r}")
            tB, twdet, tN, txg = el.tri6_geometry(nodes, mesh.tris)
        else:
            tB = np.zeros((0, 3, 3, 12)); twdet = np.zeros((0, 3)); tN = np.zeros((3, 6)); txg = np.zeros((0, 3, 2))
        self.tri_B, self.tri_wdet, self.tri_N, self.tri_xg = tB, twdet, tN, txg
        self.tri_P = np.array([materials.solids[m].to_array() for m in mesh.tri_mat]).reshape(-1, 6)
        # interfaces
        if len(mesh.ifaces):
            for m in set(mesh.iface_mat):
                if m not in materials.interfaces:
                    raise BoundaryConditionError(f"no interface parameters for {m!r}")
            self.if_rot, self.if_wt = el.iface_geometry(nodes, mesh.ifaces)
        else:
            self.if_rot, self.if_wt = np.zeros((0, 3, 2, 2)), np.zeros((0, 3))
        self.if_P = np.array([materials.interfaces[m].to_array() for m in mesh.iface_mat]).reshape(-1, 10)
        self._build_pattern()
        self._gravity = None

    # -- sparse pattern -------------------------------------------------------
    def _build_pattern(self):
        groups = [("cdp", _edofs(self.cdp_conn)), ("el", _edofs(self.mesh.quads[self.el_idx])),
                  ("tri", _edofs(self.mesh.tris)), ("if", _edofs(self.mesh.ifaces))]
        keys = []
        self.edofs = {}
        for name, ed in groups:
            self.edofs[name] = ed
            nd = ed.shape[1] if ed.ndim == 2 else 0
            r = np.repeat(ed, nd, axis=1).ravel()
            c = np.tile(ed, (1, nd)).ravel()
            keys.append(r * self.n_dof + c)
        allk = np.concatenate(keys) if keys else np.zeros(0, np.int64)
        uniq, inv = np.unique(allk, return_inverse=True)
        self.pat_rows = uniq // self.n_dof
        self.pat_cols = uniq % self.n_dof
        self.pat_indptr = np.concatenate([[0], np.cumsum(np.bincount(self.pat_rows, minlength=self.n_dof))])
        self.pat_inv = {}
        start = 0
        for (name, _), k in zip(groups, keys):
            self.pat_inv[name] = inv[start:start + len(k)]
            start += len(k)
        self.nnz = len(uniq)
        self.el_data = np.bincount(self.pat_inv["el"], weights=self.el_Ke.ravel(),
                                   minlength=self.nnz).astype(float)
        K_el = sp.csr_matrix((self.el_data, self.pat_cols, self.pat_indptr), shape=(self.n_dof, self.n_dof))
        self.K_el = K_el
        self._reduced = {}

    def reduced_pattern(self, free: np.ndarray):
        key = free.tobytes()
        if key not in self._reduced:
            fmask = np.zeros(self.n_dof, bool)
            fmask[free] = True
            keep = fmask[self.pat_rows] & fmask[self.pat_cols]
            newid = -np.ones(self.n_dof, np.int64)
            newid[free] = np.arange(len(free))
            r = newid[self.pat_rows[keep]]
            c = newid[self.pat_cols[keep]]
            indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=len(free)))])
            self._reduced[key] = (keep, c, indptr)
        return self._reduced[key]

    # -- states ---------------------------------------------------------------
    def initial_states(self) -> dict:
        return {"cdp": np.zeros((len(self.cdp_idx), 9, N_STATE)),
                "tri": np.zeros((len(self.mesh.tris), 3, 6)),
                "if": np.zeros((len(self.mesh.ifaces), 3, N_ISTATE))}

    # -- assembly -------------------------------------------------------------
    def assemble(self, u: np.ndarray, states: dict, want_k: bool = True, secant: bool = False):
        """Internal force vector, tangent (CSR or None), trial states, and diagnostics."""
        n = self.n_dof
        parts_f = []
        parts_k = []
        info = {"numeric": 0}
        new = {}
        fe, Ke, new["cdp"], bad, nnum = quad_cdp(self.cdp_conn, self.cdp_B, self.cdp_wdet,
                                                 self.cdp_P, states["cdp"], u, want_k, secant)
        info["numeric"] = int(nnum)
        if bad >= 0:
            raise _LocalFailure(f"continuum return map failed in quad {int(self.cdp_idx[bad])}")
        parts_f.append(("cdp", fe))
        parts_k.append(("cdp", Ke))
        fe, Ke, new["tri"], _ = tri_dp(self.mesh.tris, self.tri_B, self.tri_wdet, self.tri_P,
                                       states["tri"], u, want_k)
        parts_f.append(("tri", fe))
        parts_k.append(("tri", Ke))
        fe, Ke, new["if"], bad = iface6(self.mesh.ifaces, self.if_rot, self.if_wt, self.if_P,
                                        states["if"], u, want_k)
        if bad >= 0:
            raise _LocalFailure(f"interface return map failed in interface {int(bad)}")
        parts_f.append(("if", fe))
        parts_k.append(("if", Ke))
        f = self.K_el @ u
        for name, fe in parts_f:
            if len(fe):
                f += np.bincount(self.edofs[name].ravel(), weights=fe.ravel(), minlength=n)
        if not np.all(np.isfinite(f)):
            raise SolverError(f"non-finite internal forces (first dof {int(np.argmax(~np.isfinite(f)))})")
        K = None
        if want_k:
            data = self.el_data.copy()
            for name, Ke in parts_k:
                if len(self.edofs[name]):
                    data += np.bincount(self.pat_inv[name], weights=Ke.ravel(), minlength=self.nnz)
            if not np.all(np.isfinite(data)):
                raise SolverError("non-finite tangent entries")
            K = data
        return f, K, new, info

    def tangent_matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.pat_cols, self.pat_indptr), shape=(self.n_dof, self.n_dof))

    def reduced_matrix(self, data: np.ndarray, free: np.ndarray) -> sp.csc_matrix:
        keep, c, indptr = self.reduced_pattern(free)
        return sp.csr_matrix((data[keep], c, indptr), shape=(len(free), len(free))).tocsc()

    # -- loads ----------------------------------------------------------------
    def gravity_vector(self) -> np.ndarray:
        if self._gravity is None:
            g = np.zeros(self.n_dof)
            uw = self.materials.unit_weight
            for conn, mats, Nv, wdet in ((self.mesh.quads, self.mesh.quad_mat, self.quad_N, self.quad_wdet),
                                         (self.mesh.tris, self.mesh.tri_mat, self.tri_N, self.tri_wdet)):
                if not len(conn):
                    continue
                gam = np.array([uw.get(m, 0.0) for m in mats]) * 1e-6  # kN/m3 -> N/mm3
                nodal = np.einsum("ga,eg->ea", Nv, wdet) * gam[:, None]
                np.add.at(g, 2 * conn + 1, -nodal)
            self._gravity = g
        return self._gravity

    def patch_nodes(self, name: str) -> np.ndarray:
        if name not in self.mesh.load_patches:
            raise BoundaryConditionError(f"unknown load patch {name!r}")
        return np.unique(self.mesh.load_patches[name]["edges"].ravel())

    def patch_load(self, name: str, force: float) -> np.ndarray:
        """Nodal vector of a downward force ``force`` (N per mm width) spread uniformly over the patch."""
        p = self.mesh.load_patches[name]
        q = force / p["length"]
        return el.edge_load_vector(self.mesh.nodes, p["edges"], np.array([0.0, -q]), self.n_dof)

    def patch_weights(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Patch nodes and their load shares (sum 1)."""
        f = self.patch_load(name, 1.0)
        nodes = self.patch_nodes(name)
        w = -f[2 * nodes + 1]
        return nodes, w / w.sum()

    def support_dofs(self) -> np.ndarray:
        ns = self.mesh.node_sets
        fixed = []
        for key in ("left_springing", "right_springing", "fill_base"):
            if key in ns:
                fixed += [2 * ns[key], 2 * ns[key] + 1]
        if "fill_sides" in ns:
            fixed.append(2 * ns["fill_sides"])
        if not fixed:
            raise BoundaryConditionError("mesh has no supported node sets")
        return np.unique(np.concatenate(fixed))


class _LocalFailure(SolverError):
    pass


# ---------------------------------------------------------------------------
# nonlinear solution
# ---------------------------------------------------------------------------

@dataclass
class StepLog:
    step: int
    stage: int
    load: float
    iterations: int
    residual_ratio: float
    reaction_balance: float
    size_fraction: float
    numeric_tangent_points: int


@dataclass
class RunResult:
    trace: ResponseTrace
    model: Model
    u: np.ndarray
    states: dict
    log: list
    label: str = "mixed"
    dissipation: list = field(default_factory=list)
    status: str = ""


def _stagnating(norms: list) -> bool:
    """Residual has not dropped by 5x over the last three iterations."""
    return len(norms) >= 5 and norms[-1] > 0.2 * norms[-4]


class _Newton:
    def __init__(self, model: Model, protocol: LoadProtocol):
        self.m = model
        self.p = protocol
        self.K_last = None

    def _search(self, committed, free, u, du, f_fixed, fhat=None, lam=0.0, dl=0.0) -> float:
        """Step length with the smallest residual among a few trial fractions (stagnation guard)."""
        best, s_best = np.inf, 1.0
        for s in (1.0, 0.6, 0.3, 0.1):
            ut = u.copy()
            ut[free] += s * du
            fe = f_fixed if fhat is None else f_fixed + (lam + s * dl) * fhat
            try:
                f, _, _, _ = self.m.assemble(ut, committed, False)
            except _LocalFailure:
                continue
            nr = np.linalg.norm((f - fe)[free])
            if nr < best:
                best, s_best = nr, s
        return s_best

    def solve(self, u0, committed, f_ext, presc, presc_val, f_int0=None):
        """Newton solve for the new load/prescribed values. Returns (u, f_int, K, states, iters, ratio, numeric)."""
        m, p = self.m, self.p
        n = m.n_dof
        free_mask = np.ones(n, bool)
        free_mask[presc] = False
        free = np.where(free_mask)[0]
        u = u0.copy()
        if self.K_last is None or f_int0 is None:
            f_int0, self.K_last, _, _ = m.assemble(u0, committed, True)
        # tangent predictor
        du_p = np.zeros(n)
        du_p[presc] = presc_val - u0[presc]
        Kfull = m.tangent_matrix(self.K_last)
        r_pred = (f_int0 - f_ext + Kfull @ du_p)[free]
        Kff = m.reduced_matrix(self.K_last, free)
        try:
            lu = spla.splu(Kff)
        except RuntimeError as exc:
            raise BoundaryConditionError(f"singular tangent: {exc}") from exc
        duf = -lu.solve(r_pred)
        u[presc] = presc_val
        u[free] += duf
        e_ref = abs(duf @ r_pred)
        numeric = 0
        prev_norm = None
        u_prev = duf_prev = None
        s = 1.0
        back = 0
        it = 0
        norm, ref = np.inf, 1.0
        secant, norms = False, []
        while it < (2 * p.max_iter if secant else p.max_iter):
            it += 1
            try:
                f_int, Kd, trial, info = m.assemble(u, committed, True, secant)
                norm = np.linalg.norm((f_int - f_ext)[free])
            except _LocalFailure:
                if u_prev is None or back >= 4:
                    raise
                norm = np.inf
            if prev_norm is not None and norm > prev_norm and back < 4:
                # backtrack along the previous correction
                s *= 0.5
                back += 1
                u = u_prev.copy()
                u[free] += s * duf_prev
                continue
            s, back = 1.0, 0
            numeric = info["numeric"]
            rf = (f_int - f_ext)[free]
            ref = max(np.linalg.norm(f_int), np.linalg.norm(f_ext), 1e-30)
            Kff = m.reduced_matrix(Kd, free)
            try:
                lu = spla.splu(Kff)
            except RuntimeError as exc:
                raise _LocalFailure(f"singular tangent: {exc}") from exc
            duf = -lu.solve(rf)
            if not np.all(np.isfinite(duf)):
                raise _LocalFailure("non-finite Newton correction")
            energy = abs(duf @ rf)
            log.debug("  it %d  r/ref %.3e  energy %.3e  numeric %d", it, norm / ref,
                      energy / max(e_ref, 1e-300), info["numeric"])
            if prev_norm is None:
                e_ref = max(e_ref, energy)
            if norm <= p.tol_force * ref and energy <= p.tol_energy * max(e_ref, 1e-300):
                self.K_last = Kd
                return u, f_int, trial, it, norm / ref, numeric
            norms.append(norm)
            secant = secant or _stagnating(norms)
            if prev_norm is not None and it >= 4 and norm > 0.5 * prev_norm:
                duf = duf * self._search(committed, free, u, duf, f_ext)
            u_prev, duf_prev, prev_norm = u.copy(), duf, norm
            u[free] += duf
        raise _LocalFailure(f"Newton did not converge in {p.max_iter} iterations (ratio {norm / ref:.2e})")


    def solve_indirect(self, u0, committed, f_pre, fhat, lam0, a, target, supports, f_int0=None):
        """Bordered Newton: load ``f_pre + lam * fhat`` with the constraint ``a @ u = target``.

        Returns (u, lam, f_int, states, iters, ratio, numeric).
        """
        m, p = self.m, self.p
        n = m.n_dof
        free_mask = np.ones(n, bool)
        free_mask[supports] = False
        free = np.where(free_mask)[0]
        af, ff = a[free], fhat[free]
        u = u0.copy()
        lam = lam0
        if self.K_last is None or f_int0 is None:
            f_int0, self.K_last, _, _ = m.assemble(u0, committed, True)

        def bordered(Kd, r, g):
            try:
                lu = spla.splu(m.reduced_matrix(Kd, free))
            except RuntimeError as exc:
                raise _LocalFailure(f"singular tangent: {exc}") from exc
            x1 = lu.solve(ff)
            x2 = -lu.solve(r)
            den = af @ x1
            if not np.isfinite(den) or abs(den) < 1e-300:
                raise _LocalFailure("control constraint is singular")
            dl = (-g - af @ x2) / den
            du = x2 + dl * x1
            if not np.all(np.isfinite(du)):
                raise _LocalFailure("non-finite Newton correction")
            return du, dl

        r0 = (f_int0 - f_pre - lam * fhat)[free]
        du, dl = bordered(self.K_last, r0, a @ u - target)
        u[free] += du
        lam += dl
        e_ref = abs(du @ r0) + abs(dl * (ff @ du))
        numeric = 0
        it = 0
        norm, ref = np.inf, 1.0
        prev = None
        back = 0
        secant, norms = False, []
        while it < (2 * p.max_iter if secant else p.max_iter):
            it += 1
            try:
                f_int, Kd, trial, info = m.assemble(u, committed, True, secant)
                f_ext = f_pre + lam * fhat
                norm = np.linalg.norm((f_int - f_ext)[free])
            except _LocalFailure:
                if prev is None or back >= 4:
                    raise
                norm = np.inf
            if prev is not None and norm > prev[0] and back < 4:
                back += 1
                s = 0.5 ** back
                u = prev[1].copy()
                u[free] += s * prev[2]
                lam = prev[3] + s * prev[4]
                continue
            back = 0
            numeric = info["numeric"]
            rf = (f_int - f_ext)[free]
            ref = max(np.linalg.norm(f_int), np.linalg.norm(f_ext), 1e-30)
            du, dl = bordered(Kd, rf, a @ u - target)
            energy = abs(du @ rf)
            log.debug("  it %d  r/ref %.3e  energy %.3e  numeric %d", it, norm / ref,
                      energy / max(e_ref, 1e-300), info["numeric"])
            if prev is None:
                e_ref = max(e_ref, energy)
            if norm <= p.tol_force * ref and energy <= p.tol_energy * max(e_ref, 1e-300):
                self.K_last = Kd
                return u, lam, f_int, trial, it, norm / ref, numeric
            norms.append(norm)
            secant = secant or _stagnating(norms)
            if prev is not None and it >= 4 and norm > 0.5 * prev[0]:
                sl = self._search(committed, free, u, du, f_pre, fhat, lam, dl)
                du, dl = sl * du, sl * dl
            prev = (norm, u.copy(), du, lam, dl)
            u[free] += du
            lam += dl
        raise _LocalFailure(f"Newton did not converge in {p.max_iter} iterations (ratio {norm / ref:.2e})")


def solve_quasi_static(mesh: Mesh, materials: Materials, protocol: LoadProtocol,
                       dump_dir=None, model: Model | None = None) -> RunResult:
    """Two-stage analysis: preload under force control, then patch displacement control."""
    m = model or Model(mesh, materials)
    p = protocol
    n = m.n_dof
    supports = m.support_dofs()
    states = m.initial_states()
    u = np.zeros(n)
    newton = _Newton(m, p)
    steplog: list[StepLog] = []
    trace = ResponseTrace()
    ledger = DissipationLedger(m)
    # ---- stage 1: gravity and preloads, force control -----------------------
    f_pre = np.zeros(n)
    for pl in p.preloads:
        f_pre += m.patch_load(pl.patch, pl.force)
    if p.gravity:
        f_pre += m.gravity_vector()
    n_ramp = max([pl.steps for pl in p.preloads] + [p.gravity_steps if p.gravity else 1])
    f_int = None
    lam = 0.0
    if np.any(f_pre):
        dlam = 1.0 / n_ramp
        k = 0
        while lam < 1.0 - 1e-12:
            target = min(1.0, lam + dlam)
            try:
                u_new, f_new, trial, it, ratio, nnum = newton.solve(u, states, target * f_pre, supports,
                                                                    np.zeros(len(supports)), f_int)
            except _LocalFailure as exc:
                dlam *= 0.5
                newton.K_last = None
                if dlam < (1.0 / n_ramp) * p.min_step_fraction:
                    raise PreloadError(f"preload stage did not converge at load factor {lam:.3f}: {exc}")
                continue
            old, u_old = states, u
            u, f_int, states, lam = u_new, f_new, trial, target
            k += 1
            steplog.append(StepLog(k, 1, lam, it, ratio, _reaction_balance(f_int, target * f_pre, supports),
                                   dlam * n_ramp, nnum))
            ledger.update(old, states, u_old, u)
    f_ext = f_pre
    u1 = u.copy()
    # ---- stage 2: displacement control of the patch -------------------------
    ctrl_nodes = m.patch_nodes(p.controlled_patch)
    ctrl_dofs = 2 * ctrl_nodes + 1
    overlap = np.intersect1d(ctrl_dofs, supports)
    if len(overlap):
        raise BoundaryConditionError("controlled patch overlaps supports")
    rigid = p.control_mode == "rigid"
    if rigid:
        presc = np.concatenate([supports, ctrl_dofs])
        presc_base = u[presc].copy()
        ctrl_slice = slice(len(supports), len(presc))
    else:
        presc = supports
        fhat = m.patch_load(p.controlled_patch, 1.0)
        a_ctrl = np.zeros(n)
        cn, cw = m.patch_weights(p.controlled_patch)
        a_ctrl[2 * cn + 1] = -cw
        a_base = a_ctrl @ u
    lam = 0.0
    mon = []
    for key in p.monitors:
        if key not in mesh.node_sets:
            raise BoundaryConditionError(f"missing monitor node set {key!r}")
        mon.append(int(mesh.node_sets[key][0]))
    parts = {}
    for name in p.partition_patches:
        nodes, w = m.patch_weights(name)
        F_applied = sum(pl.force for pl in p.preloads if pl.patch == name)
        parts[name] = (nodes, w, F_applied)
    if f_int is None:
        f_int, newton.K_last, _, _ = m.assemble(u, states, True)

    def record(step, c):
        R = -(f_int - f_ext)[ctrl_dofs].sum() if rigid else lam
        pf, pu = {}, {}
        for name, (nodes, w, Fa) in parts.items():
            pf[name] = Fa + (R if name == p.controlled_patch else 0.0)
            pu[name] = -(w @ u[2 * nodes + 1])
        trace.append(step, c / p.velocity, R, -(u[2 * mon[0] + 1] - u1[2 * mon[0] + 1]),
                     -(u[2 * mon[1] + 1] - u1[2 * mon[1] + 1]), pf, pu)
        return R

    record(0, 0.0)
    dump_dir = Path(dump_dir) if dump_dir else None
    c = 0.0
    dc = p.control_rate
    easy = 0
    peak = 0.0
    status = "max steps"
    step = 0
    while step < p.max_steps:
        target = c + dc
        try:
            if rigid:
                pv = presc_base.copy()
                pv[ctrl_slice] -= target
                u_new, f_new, trial, it, ratio, nnum = newton.solve(u, states, f_ext, presc, pv, f_int)
                lam_new = lam
            else:
                u_new, lam_new, f_new, trial, it, ratio, nnum = newton.solve_indirect(
                    u, states, f_pre, fhat, lam, a_ctrl, a_base + target, supports, f_int)
        except _LocalFailure as exc:
            log.debug("step %d cut (%s)", step + 1, exc)
            newton.K_last = None
            dc *= 0.5
            easy = 0
            if dc < p.control_rate * p.min_step_fraction * (1 - 1e-9):
                status = "collapse reached"
                break
            continue
        step += 1
        old, u_old = states, u
        u, f_int, states, c, lam = u_new, f_new, trial, target, lam_new
        if not rigid:
            f_ext = f_pre + lam * fhat
        F = record(step, c)
        steplog.append(StepLog(step, 2, c, it, ratio, _reaction_balance(f_int, f_ext, presc),
                               dc / p.control_rate, nnum))
        ledger.update(old, states, u_old, u)
        if nnum:
            log.debug("step %d used numerical tangents at %d points", step, nnum)
        if dump_dir and p.checkpoint_every and step % p.checkpoint_every == 0:
            write_fields(m, states, u, dump_dir / f"fields_{step:05d}.vtk")
        peak = max(peak, F)
        if peak > 0 and F < p.drop_fraction * peak:
            status = "softening limit"
            break
        if c >= p.max_displacement - 1e-12:
            status = "displacement cap"
            break
        easy = easy + 1 if it <= 6 else 0
        if dc < p.control_rate and easy >= 2:
            dc = min(p.control_rate, 2 * dc)
            easy = 0
    trace.status = status
    res = RunResult(trace=trace, model=m, u=u, states=states, log=steplog, dissipation=ledger.history, status=status)
    res.label = failure_mode_classifier(m, states, p.controlled_patch)
    if dump_dir:
        write_fields(m, states, u, dump_dir / "fields_final.vtk")
    return res


def _reaction_balance(f_int, f_ext, presc) -> float:
    """Relative mismatch between the reaction sum and the applied load sum (both directions)."""
    R = np.zeros_like(f_int)
    R[presc] = (f_int - f_ext)[presc]
    out = 0.0
    for comp in range(2):
        applied = f_ext[comp::2].sum()
        reac = R[comp::2].sum()
        scale = max(np.abs(f_ext[comp::2]).sum() + np.abs(R[comp::2]).sum(), 1e-30)
        out = max(out, abs(applied + reac) / scale)
    return out


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

def _cdp_energy(model: Model, S: np.ndarray):
    """Per-Gauss-point nominal stress and free energy from stored states."""
    if not len(S):
        return np.zeros((0, 9, 6)), np.zeros((0, 9))
    P = model.cdp_P
    ee = S[:, :, S_EPS:S_EPS + 6] - S[:, :, S_EPSP:S_EPSP + 6]
    sig = np.empty_like(ee)
    for e in range(len(P)):
        C = elastic_matrix(P[e, 0], P[e, 1])
        sig[e] = ee[e] @ C.T
    d = S[:, :, S_D]
    nom = (1 - d)[..., None] * sig
    psi = 0.5 * np.einsum("egi,egi->eg", nom, ee)
    return nom, psi


def _tri_energy(model: Model, S: np.ndarray, u: np.ndarray):
    if not len(S):
        return np.zeros((0, 3, 6)), np.zeros((0, 3)), np.zeros((0, 3, 6))
    e3 = np.einsum("egia,ea->egi", model.tri_B, u[model.edofs["tri"]])
    eps = np.zeros(S.shape)
    eps[..., 0], eps[..., 1], eps[..., 3] = e3[..., 0], e3[..., 1], e3[..., 2]
    ee = eps - S
    sig = np.empty_like(ee)
    for e in range(len(S)):
        sig[e] = ee[e] @ elastic_matrix(model.tri_P[e, 0], model.tri_P[e, 1]).T
    return sig, 0.5 * np.einsum("egi,egi->eg", sig, ee), eps


class DissipationLedger:
    """Cumulative dissipated energy per mechanism (N mm per mm of width).

    Continuum and backfill dissipation are integrated per step as work done
    minus the change of free energy (mid-point rule); interface terms are the
    plastic works stored in the interface states.
    """

    def __init__(self, model: Model):
        self.m = model
        self.continuum = 0.0
        self.backfill = 0.0
        self.history: list[dict] = []

    def update(self, old: dict, new: dict, u_old: np.ndarray, u_new: np.ndarray) -> dict:
        m = self.m
        if len(m.cdp_idx):
            so, po = _cdp_energy(m, old["cdp"])
            sn, pn = _cdp_energy(m, new["cdp"])
            deps = new["cdp"][:, :, S_EPS:S_EPS + 6] - old["cdp"][:, :, S_EPS:S_EPS + 6]
            inc = 0.5 * np.einsum("egi,egi->eg", so + sn, deps) - (pn - po)
            self.continuum += float(np.sum(inc * m.cdp_wdet))
        if len(m.mesh.tris):
            so, po, eo = _tri_energy(m, old["tri"], u_old)
            sn, pn, en = _tri_energy(m, new["tri"], u_new)
            inc = 0.5 * np.einsum("egi,egi->eg", so + sn, en - eo) - (pn - po)
            self.backfill += float(np.sum(inc * m.tri_wdet))
        snap = {"continuum": self.continuum, "backfill": self.backfill}
        S = new["if"]
        w = m.if_wt
        for key, col in (("if_tension", J_WPT), ("if_shear", J_WPS), ("if_compression", J_WPC),
                         ("if_friction", J_WFR)):
            snap[key] = float(np.sum(w * S[:, :, col])) if len(S) else 0.0
        snap["total"] = sum(snap.values())
        self.history.append(snap)
        return snap


def von_mises(sig6: np.ndarray) -> np.ndarray:
    s = np.asarray(sig6)
    a = (s[..., 0] - s[..., 1]) ** 2 + (s[..., 1] - s[..., 2]) ** 2 + (s[..., 2] - s[..., 0]) ** 2
    b = s[..., 3] ** 2 + s[..., 4] ** 2 + s[..., 5] ** 2
    return np.sqrt(0.5 * a + 3.0 * b)


def element_fields(model: Model, states: dict, u: np.ndarray) -> dict:
    """Cell scalars in mesh order (quads, triangles, interfaces)."""
    mesh = model.mesh
    nq, nt, ni = len(mesh.quads), len(mesh.tris), len(mesh.ifaces)
    ncell = nq + nt + ni
    d = np.zeros(ncell)
    dn = np.zeros(ncell)
    dt = np.zeros(ncell)
    vm = np.zeros(ncell)
    if len(model.cdp_idx):
        nom, _ = _cdp_energy(model, states["cdp"])
        d[model.cdp_idx] = states["cdp"][:, :, S_D].mean(axis=1)
        vm[model.cdp_idx] = von_mises(nom).mean(axis=1)
    if len(model.el_idx):
        ue = u[model.edofs["el"]]
        eps = np.einsum("egia,ea->egi", model.quad_B[model.el_idx], ue)
        sig3 = np.einsum("eij,egj->egi", model.el_D, eps)
        nu = np.array([model.materials.solids[mesh.quad_mat[e]].nu for e in model.el_idx])
        s6 = np.zeros(sig3.shape[:2] + (6,))
        s6[..., 0], s6[..., 1], s6[..., 3] = sig3[..., 0], sig3[..., 1], sig3[..., 2]
        s6[..., 2] = nu[:, None] * (sig3[..., 0] + sig3[..., 1])
        vm[model.el_idx] = von_mises(s6).mean(axis=1)
    if nt:
        ue = u[model.edofs["tri"]]
        eps = np.einsum("egia,ea->egi", model.tri_B, ue)
        ep = states["tri"]
        E = model.tri_P[:, 0]
        nu = model.tri_P[:, 1]
        s6 = np.zeros(ep.shape)
        for e in range(nt):
            C = elastic_matrix(E[e], nu[e])
            ee = -ep[e].copy()
            ee[:, 0] += eps[e, :, 0]
            ee[:, 1] += eps[e, :, 1]
            ee[:, 3] += eps[e, :, 2]
            s6[e] = ee @ C.T
        vm[nq:nq + nt] = von_mises(s6).mean(axis=1)
    if ni:
        dn[nq + nt:] = states["if"][:, :, J_DN].mean(axis=1)
        dt[nq + nt:] = states["if"][:, :, J_DT].mean(axis=1)
    return {"d": d, "D_n": dn, "D_t": dt, "von_mises": vm}


def write_fields(model: Model, states: dict, u: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_vtk(model.mesh, path, point_vectors={"displacement": u.reshape(-1, 2)},
              cell_scalars=element_fields(model, states, u))


# ---------------------------------------------------------------------------
# failure classification
# ---------------------------------------------------------------------------

SLIDING_DT = 0.8
SLIDING_FRACTION = 0.3
HINGE_DAMAGE = 0.8
HINGE_SPAN = 0.6
HINGE_MIN = 3
PUNCH_DAMAGE = 0.8
PUNCH_FRACTION = 0.7
PUNCH_RADIUS = 1.5


def _polar(geom: dict, xy: np.ndarray):
    span, rise = geom["span"], geom["rise"]
    R = (span ** 2 / 4 + rise ** 2) / (2 * rise)
    xc, yc = span / 2, rise - R
    return np.arctan2(xy[..., 0] - xc, xy[..., 1] - yc), np.hypot(xy[..., 0] - xc, xy[..., 1] - yc), R


def _union_length(intervals) -> float:
    total = 0.0
    cur = None
    for a, b in sorted(intervals):
        if cur is None or a > cur[1]:
            if cur is not None:
                total += cur[1] - cur[0]
            cur = [a, b]
        else:
            cur[1] = max(cur[1], b)
    if cur is not None:
        total += cur[1] - cur[0]
    return total


def hinge_clusters(model: Model, states: dict) -> list:
    """Groups of tensile damage through the arch depth: ``[(angle, depth fraction), ...]``."""
    mesh = model.mesh
    geom = mesh.meta.get("geometry")
    if geom is None:
        return []
    t = geom["thickness"]
    items = []  # (angle, rho_lo, rho_hi)
    kinds = np.asarray(mesh.iface_kind)
    if len(mesh.ifaces):
        rad = np.where(kinds == "radial")[0]
        dmg = states["if"][rad][:, :, J_DN].max(axis=1) > HINGE_DAMAGE
        for e in rad[dmg]:
            phi, rho, _ = _polar(geom, mesh.nodes[mesh.ifaces[e, :3]])
            items.append((float(phi.mean()), float(rho.min()), float(rho.max())))
    if len(model.cdp_idx):
        dmg = states["cdp"][:, :, S_DT].max(axis=1) > HINGE_DAMAGE
        for k in np.where(dmg)[0]:
            phi, rho, _ = _polar(geom, mesh.nodes[mesh.quads[model.cdp_idx[k], :4]])
            items.append((float(phi.mean()), float(rho.min()), float(rho.max())))
    if not items:
        return []
    _, _, R = _polar(geom, np.zeros((1, 2)))
    width = geom.get("brick_length", 215.0) / R
    items.sort()
    clusters = []
    cur = [items[0]]
    for it in items[1:]:
        if it[0] - cur[-1][0] <= width:
            cur.append(it)
        else:
            clusters.append(cur)
            cur = [it]
    clusters.append(cur)
    out = []
    for cl in clusters:
        frac = _union_length([(a, b) for _, a, b in cl]) / t
        out.append((float(np.mean([c[0] for c in cl])), float(frac)))
    return out


def failure_mode_classifier(model: Model, states: dict, load_patch: str | None = None) -> str:
    mesh = model.mesh
    kinds = np.asarray(mesh.iface_kind)
    if len(mesh.ifaces):
        circ = np.where(kinds == "circumferential")[0]
        if len(circ):
            frac = np.mean(states["if"][circ][:, :, J_DT] > SLIDING_DT)
            if frac >= SLIDING_FRACTION:
                return "ring_sliding"
    if sum(1 for _, f in hinge_clusters(model, states) if f > HINGE_SPAN) >= HINGE_MIN:
        return "flexural_hinges"
    if len(model.cdp_idx) and load_patch in mesh.load_patches:
        d = states["cdp"][:, :, S_D]
        w = model.cdp_wdet
        dam = d > PUNCH_DAMAGE
        total = np.sum(w[dam])
        if total > 0:
            pt = mesh.load_patches[load_patch]
            xg = model.quad_xg[model.cdp_idx]
            near = np.abs(xg[..., 0] - pt["centre"]) <= PUNCH_RADIUS * pt["length"]
            if np.sum(w[dam & near]) / total >= PUNCH_FRACTION:
                return "punching"
    return "mixed"


def static_solve(model: Model, f_ext: np.ndarray, presc: np.ndarray, presc_val: np.ndarray,
                 states: dict | None = None, protocol: LoadProtocol | None = None):
    """Equilibrium for one load state from the given (default virgin) history.

    Returns ``(u, f_int, states, iterations)``.
    """
    states = model.initial_states() if states is None else states
    newton = _Newton(model, protocol or LoadProtocol())
    presc = np.asarray(presc, dtype=np.int64)
    u, f_int, trial, it, _, _ = newton.solve(np.zeros(model.n_dof), states, f_ext, presc,
                                             np.asarray(presc_val, float))
    return u, f_int, trial, it
