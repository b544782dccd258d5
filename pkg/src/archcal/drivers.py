"""Material-point drivers: scripted strain or jump paths with CSV output.

Uniaxial and shear paths use mixed control: the driven component is
prescribed and the listed lateral components are solved so that their
stresses vanish (or equal a prescribed normal stress for interfaces).
"""
from __future__ import annotations

import csv
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .continuum import (S_D, S_DC, S_DT, S_KC, S_KT, ContinuumParams, cdp_material)
from .interface import (J_DN, J_DT, J_Q, J_WPC, J_WPS, J_WPT, InterfaceParams, iface_material,
                        iface_update)
from .scenarios import ContinuumSpec, InterfaceSpec, ScenarioError

ALL = np.arange(6)
CONT_COLUMNS = (["step"] + [f"eps_{c}" for c in ("xx", "yy", "zz", "xy", "yz", "xz")] +
                [f"sig_{c}" for c in ("xx", "yy", "zz", "xy", "yz", "xz")] +
                ["kappa_t", "kappa_c", "d_t", "d_c", "d"])
IFACE_COLUMNS = ["step", "jump_n", "jump_t", "sigma", "tau", "q", "W_pt", "W_ps", "W_pc", "D_n", "D_t"]


class DriverError(RuntimeError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=False)


class PathSpec(_Strict):
    kind: Literal["uniaxial_tension", "uniaxial_compression", "pure_shear", "tension", "shear", "custom"]
    peak: float = 0.0  # strain (continuum) or jump in mm (interface); 0 picks a default
    steps: int = Field(200, ge=1)
    normal_stress: float = 0.0  # interface shear path, MPa (negative = compression)
    points: Optional[list[list[float]]] = None  # custom path vertices
    steps_per_segment: int = Field(50, ge=1)


class DriverSpec(_Strict):
    name: str = "driver"
    material: Union[ContinuumSpec, InterfaceSpec] = Field(discriminator="type")
    lch: float = Field(1.0, gt=0)
    path: PathSpec


def parse_driver(data: dict) -> DriverSpec:
    from pydantic import ValidationError
    try:
        spec = DriverSpec.model_validate(data)
    except ValidationError as exc:
        msg = "; ".join(".".join(map(str, e["loc"])) + ": " + e["msg"] for e in exc.errors())
        raise ScenarioError(msg) from None
    cont = spec.material.type == "continuum"
    if cont and spec.path.kind in ("tension", "shear"):
        raise ScenarioError(f"path.kind {spec.path.kind!r} applies to interfaces")
    if not cont and spec.path.kind in ("uniaxial_tension", "uniaxial_compression", "pure_shear"):
        raise ScenarioError(f"path.kind {spec.path.kind!r} applies to continuum points")
    if spec.path.kind == "custom":
        pts = spec.path.points or []
        width = 6 if cont else 2
        if len(pts) < 2 or any(len(p) != width for p in pts):
            raise ScenarioError(f"custom path needs at least 2 points of {width} components")
    return spec


def _mixed_solve(update, eps, free, target, scale, max_iter=30):
    """Newton on the ``free`` components so that stress[free] = target."""
    for _ in range(max_iter):
        out = update(eps)
        r = out[1][free] - target
        if np.all(np.abs(r) <= 1e-10 * scale):
            return eps, out
        D = out[2][np.ix_(free, free)]
        eps = eps.copy()
        eps[free] -= np.linalg.solve(D, r)
    # fully damaged points carry a floored tangent and converge only linearly
    if np.all(np.abs(r) <= 1e-6 * scale):
        return eps, out
    raise DriverError("lateral stress condition did not converge")


def continuum_path(p: ContinuumParams, kind: str, peak: float = 0.0, steps: int = 200,
                   lch: float = 1.0, points=None, steps_per_segment: int = 50) -> dict:
    """Drive a continuum point. Uniaxial paths keep the lateral normal stresses at zero."""
    pa = p.to_array(lch)
    s = np.zeros(17)
    e_t = p.ft / p.E
    if kind == "custom":
        verts = np.asarray(points, float)
        path = [verts[0]]
        for a, b in zip(verts[:-1], verts[1:]):
            for k in range(1, steps_per_segment + 1):
                path.append(a + (b - a) * k / steps_per_segment)
        path = np.array(path)
        free = np.array([], dtype=int)
        drive = None
    else:
        e_crack = p.Gt / (lch * p.ft)  # decay strain of the softening branch
        drive, sign, default = {"uniaxial_tension": (0, 1.0, 10 * e_t + 12 * e_crack),
                                "uniaxial_compression": (0, -1.0, 5 * p.fc_max / p.E),
                                "pure_shear": (3, 1.0, 10 * e_t)}[kind]
        peak = abs(peak) or default
        free = np.array([1, 2]) if drive == 0 else np.array([0, 1, 2])
        path = None
    rows = []
    eps = np.zeros(6)
    n = len(path) if path is not None else steps + 1
    scale = max(p.ft, 1e-9)
    for i in range(n):
        if path is not None:
            eps = path[i].copy()
            s_new, nom, _, ok, _ = cdp_material(pa, s, eps, ALL)
            if not ok:
                raise DriverError(f"return map failed at step {i}")
        else:
            eps = eps.copy()
            eps[drive] = sign * peak * i / steps

            def upd(e):
                s_new, nom, D, ok, _ = cdp_material(pa, s, e, ALL)
                if not ok:
                    raise DriverError(f"return map failed at step {i}")
                return s_new, nom, D
            eps, (s_new, nom, _) = _mixed_solve(upd, eps, free, 0.0, scale)
        s = s_new
        rows.append([i, *eps, *nom, s[S_KT], s[S_KC], s[S_DT], s[S_DC], s[S_D]])
    return {c: np.array([r[k] for r in rows]) for k, c in enumerate(CONT_COLUMNS)}


def interface_path(p: InterfaceParams, kind: str, peak: float = 0.0, steps: int = 200,
                   normal_stress: float = 0.0, points=None, steps_per_segment: int = 50) -> dict:
    """Drive an interface point. The shear path holds the normal traction at ``normal_stress``."""
    pa = p.to_array()
    s = np.zeros(11)
    if kind == "custom":
        verts = np.asarray(points, float)
        path = [verts[0]]
        for a, b in zip(verts[:-1], verts[1:]):
            for k in range(1, steps_per_segment + 1):
                path.append(a + (b - a) * k / steps_per_segment)
        seq = np.array(path)
    elif kind == "tension":
        peak = abs(peak) or 20.0 * p.Gt / p.ft
        seq = np.column_stack([np.linspace(0, peak, steps + 1), np.zeros(steps + 1)])
    else:
        peak = abs(peak) or 20.0 * p.Gs / max(p.c, 1e-9)
        seq = np.column_stack([np.zeros(steps + 1), np.linspace(0, peak, steps + 1)])
    rows = []
    jump = np.zeros(2)
    scale = max(p.c, p.ft, 1e-9)
    for i, target in enumerate(seq):
        if kind == "shear":
            jump = np.array([jump[0], target[1]])
            if i == 0 and normal_stress:
                jump[0] = normal_stress / p.kn

            def upd(j):
                s_new, nom, T, ok = iface_material(pa, s, j)
                if not ok:
                    raise DriverError(f"interface return failed at step {i}")
                return s_new, nom, T
            jump, (s_new, nom, _) = _mixed_solve(upd, jump, np.array([0]), normal_stress, scale)
        else:
            jump = target.copy()
            s_new, _, nom, _, ok = iface_update(pa, s, jump)
            if not ok:
                raise DriverError(f"interface return failed at step {i}")
        s = s_new
        rows.append([i, jump[0], jump[1], nom[0], nom[1], s[J_Q], s[J_WPT], s[J_WPS], s[J_WPC],
                     s[J_DN], s[J_DT]])
    return {c: np.array([r[k] for r in rows]) for k, c in enumerate(IFACE_COLUMNS)}


def run_driver(spec: DriverSpec) -> dict:
    d = spec.material.model_dump()
    d.pop("type")
    ps = spec.path
    try:
        if spec.material.type == "continuum":
            return continuum_path(ContinuumParams(**d), ps.kind, ps.peak, ps.steps, spec.lch,
                                  ps.points, ps.steps_per_segment)
        return interface_path(InterfaceParams(**d), ps.kind, ps.peak, ps.steps, ps.normal_stress,
                              ps.points, ps.steps_per_segment)
    except ValueError as exc:
        raise ScenarioError(f"material: {exc}") from None


def write_table(table: dict, path) -> None:
    cols = list(table)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(table[cols[0]])):
            w.writerow([int(table[c][i]) if c == "step" else repr(float(table[c][i])) for c in cols])


def dissipated(table: dict, strain_key: str, stress_key: str) -> float:
    """Work per unit volume (or area) along the path: trapezoid rule."""
    return float(np.trapezoid(table[stress_key], table[strain_key]))


def driver_preset(name: str) -> dict:
    """Packaged driver scenarios: ``driver-{continuum,interface}-{path}-{weak,strong}``."""
    from .scenarios import CONTINUUM, JOINT
    parts = name.split("-")
    if len(parts) != 4 or parts[0] != "driver" or parts[3] not in ("weak", "strong"):
        raise KeyError(name)
    tier, kind, mas = parts[1], parts[2], parts[3]
    kinds = {"continuum": {"tension": "uniaxial_tension", "compression": "uniaxial_compression",
                           "shear": "pure_shear"},
             "interface": {"tension": "tension", "shear": "shear"}}
    if tier not in kinds or kind not in kinds[tier]:
        raise KeyError(name)
    mat = ({"type": "continuum", **CONTINUUM[mas]} if tier == "continuum"
           else {"type": "interface", **JOINT[mas]})
    path = {"kind": kinds[tier][kind]}
    if tier == "continuum" and kind == "tension":
        path["steps"] = 2000  # resolves the jump from elastic limit to softening branch
    return {"name": name, "material": mat, "lch": 50.0, "path": path}


DRIVER_PRESETS = [f"driver-{t}-{k}-{m}" for t, ks in (("continuum", ("tension", "compression", "shear")),
                                                       ("interface", ("tension", "shear")))
                  for k in ks for m in ("weak", "strong")]
