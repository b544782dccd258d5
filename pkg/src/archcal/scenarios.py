"""Scenario files: schema, packaged presets and construction of mesh/materials/protocol."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .backfill import BackfillParams
from .continuum import ContinuumParams
from .interface import InterfaceParams
from .mesh import ArchGeometry, generate_backfill, generate_macroscale_arch, generate_mesoscale_arch
from .solver import ElasticParams, LoadProtocol, Materials, Preload

WIDTH = 675.0  # mm, specimen width used to convert forces to per-width values


class ScenarioError(ValueError):
    """Schema or consistency problem in a scenario file."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometrySpec(_Strict):
    span: float = 5000.0
    rise: float = 1250.0
    thickness: float = 330.0
    width: float = WIDTH
    n_rings: int = 3
    brick_length: float = 215.0
    brick_height: Optional[float] = None
    joint_thickness: float = 10.0


class BackfillSpec(_Strict):
    horiz_extent: float = 2460.0
    cover: float = 300.0
    patch_length: float = 400.0


class MeshSpec(_Strict):
    n_len: int = 40
    n_thk: int = 2
    sub_per_brick: int = 3
    patch_length: float = 210.0
    backfill: Optional[BackfillSpec] = None


class ElasticSpec(_Strict):
    type: Literal["elastic"]
    E: float
    nu: float


class ContinuumSpec(_Strict):
    type: Literal["continuum"]
    E: float
    nu: float
    fb0_ratio: float
    fy_ratio: float
    psi: float
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


class BackfillMatSpec(_Strict):
    type: Literal["backfill"]
    E: float
    nu: float
    c: float
    tan_phi: float
    tan_psi: float
    unit_weight: float = 22.0


class InterfaceSpec(_Strict):
    type: Literal["interface"]
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


MaterialSpec = Union[ElasticSpec, ContinuumSpec, BackfillMatSpec, InterfaceSpec]


class PreloadSpec(_Strict):
    patch: str
    force: float  # kN/m of width
    steps: int = 4


class ProtocolSpec(_Strict):
    gravity: bool = False
    gravity_steps: int = 2
    preloads: list[PreloadSpec] = Field(default_factory=list)
    controlled_patch: str = "L4"
    control_rate: float = Field(0.1, gt=0)
    velocity: float = Field(0.1, gt=0)
    max_steps: int = 400
    drop_fraction: float = 0.5
    max_displacement: float = 60.0
    min_step_fraction: float = 1.0 / 64.0
    max_iter: int = 20
    tol_force: float = 1e-6
    tol_energy: float = 1e-8
    partitions: Optional[list[str]] = None
    checkpoint_every: int = 0
    control_mode: Literal["rigid", "pressure"] = "rigid"


class Scenario(_Strict):
    name: str
    tier: Literal["meso", "macro", "hybrid"]
    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    mesh: MeshSpec = Field(default_factory=MeshSpec)
    materials: dict[str, MaterialSpec]
    unit_weight: dict[str, float] = Field(default_factory=dict)
    protocol: ProtocolSpec = Field(default_factory=ProtocolSpec)

    @model_validator(mode="after")
    def _check_materials(self):
        need = {"meso": ["brick", "joint"], "macro": ["masonry"],
                "hybrid": ["masonry", "ring_joint"]}[self.tier]
        if self.mesh.backfill is not None:
            need = need + ["backfill", "fill_interface"]
        for key in need:
            if key not in self.materials:
                raise ValueError(f"materials.{key} is required for tier {self.tier!r}")
        return self


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_scenario(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(_describe(exc)) from None


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_scenario(data)


def scenario_hash(sc: Scenario) -> str:
    blob = json.dumps(sc.model_dump(mode="json"), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_geometry(sc: Scenario) -> ArchGeometry:
    return ArchGeometry(**sc.geometry.model_dump())


def build_mesh(sc: Scenario):
    geom = build_geometry(sc)
    ms = sc.mesh
    if sc.tier == "meso":
        mesh = generate_mesoscale_arch(geom, patch_length=ms.patch_length, sub_per_brick=ms.sub_per_brick)
    else:
        mesh = generate_macroscale_arch(geom, ms.n_len, ms.n_thk, hybrid=sc.tier == "hybrid",
                                        patch_length=ms.patch_length)
    if ms.backfill is not None:
        mesh = generate_backfill(mesh, geom, ms.backfill.horiz_extent, ms.backfill.cover,
                                 patch_length=ms.backfill.patch_length)
    return mesh


def _material(spec):
    d = spec.model_dump()
    kind = d.pop("type")
    if kind == "elastic":
        return ElasticParams(**d)
    if kind == "continuum":
        return ContinuumParams(**d)
    if kind == "backfill":
        return BackfillParams(**d)
    return InterfaceParams(**d)


def build_materials(sc: Scenario) -> Materials:
    solids, ifaces = {}, {}
    uw = dict(sc.unit_weight)
    try:
        for name, spec in sc.materials.items():
            mat = _material(spec)
            if isinstance(mat, InterfaceParams):
                ifaces[name] = mat
            else:
                solids[name] = mat
                if isinstance(mat, BackfillParams):
                    uw.setdefault(name, mat.unit_weight)
    except ValueError as exc:
        raise ScenarioError(f"materials: {exc}") from None
    return Materials(solids=solids, interfaces=ifaces, unit_weight=uw)


def build_protocol(sc: Scenario) -> LoadProtocol:
    d = sc.protocol.model_dump()
    d["preloads"] = [Preload(**p) for p in d["preloads"]]
    return LoadProtocol(**d)


def build(sc: Scenario):
    """``(mesh, materials, protocol)`` ready for the solver."""
    return build_mesh(sc), build_materials(sc), build_protocol(sc)


# ---------------------------------------------------------------------------
# laboratory specimens
# ---------------------------------------------------------------------------

BRICK = {"weak": {"E": 6000.0, "nu": 0.15, "w": 16.0},
         "strong": {"E": 16000.0, "nu": 0.15, "w": 22.0}}

JOINT = {"weak": dict(kn=60.0, kt=30.0, ft=0.05, fc=9.1, c=0.085, tan_phi=0.5, tan_phi_g=0.0,
                      Gt=0.02, Gs=0.125, Gc=5.0),
         "strong": dict(kn=90.0, kt=40.0, ft=0.26, fc=24.5, c=0.40, tan_phi=0.5, tan_phi_g=0.0,
                        Gt=0.12, Gs=0.125, Gc=5.0)}

_CONT_COMMON = dict(nu=0.15, fb0_ratio=1.16, fy_ratio=0.3, psi=35.0, ecc=0.1, Kc=0.66, mu=0.2,
                    kappa_c_fc=2e-3, rho_c=1.0, wt=0.0)
CONTINUUM = {"weak": dict(E=2571.0, ft=0.05, fc_max=9.1, Gt=0.02, wc=0.0, **_CONT_COMMON),
             "strong": dict(E=4747.0, ft=0.26, fc_max=24.0, Gt=0.12, wc=0.0, **_CONT_COMMON)}

# reference minimum-error parameter sets for the calibrated hybrid model;
# the dilatancy angle is capped to the admissible flow-potential range
HYBRID = {"weak": dict(E=2350.0, psi=56.0, ft=0.083, Gt=0.089, fy_ratio=0.79, wc=0.10,
                       k_star=0.01, c_star=0.62, Gs_M=0.096),
          "strong": dict(E=4700.0, psi=23.0, ft=0.164, Gt=0.042, fy_ratio=0.71, wc=0.48,
                         k_star=0.01, c_star=0.69, Gs_M=0.167)}

BACKFILL = dict(E=500.0, nu=0.3, c=0.001, tan_phi=0.95, tan_psi=0.45, unit_weight=22.0)
FILL_INTERFACE = dict(kn=10.0, kt=5.0, ft=0.002, fc=9.1, c=0.0029, tan_phi=0.6, tan_phi_g=0.0,
                      Gt=0.01, Gs=0.05, Gc=5.0)

F0_BARE = 22.5  # kN
F0_CALIB = 16.0  # kN


def _kn_per_m(kn: float) -> float:
    return kn / (WIDTH / 1000.0)


def hybrid_continuum(masonry: str) -> dict:
    h = HYBRID[masonry]
    c = dict(CONTINUUM[masonry])
    c.update(E=h["E"], psi=h["psi"], ft=h["ft"], Gt=h["Gt"], fy_ratio=h["fy_ratio"], wc=h["wc"])
    return c


def preset(name: str) -> dict:
    """Scenario dictionary for a packaged preset."""
    if name in ("toy", "calib-continuum-weak", "calib-hybrid-weak", "calib-continuum-strong",
                "calib-hybrid-strong"):
        raise ScenarioError(f"{name!r} is a calibration preset; use calibration_preset()")
    parts = name.split("-")
    if len(parts) != 3 or parts[0] not in ("bare", "confined", "vt") or \
            parts[1] not in ("weak", "strong") or parts[2] not in ("meso", "macro", "hybrid"):
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    spec, masonry, tier = parts
    from .calibration import hybrid_parameter_expansion  # local import avoids a cycle
    mats: dict = {}
    uw: dict = {}
    w_mas = BRICK[masonry]["w"] if spec == "bare" else 22.0
    if tier == "meso":
        mats["brick"] = {"type": "elastic", "E": BRICK[masonry]["E"], "nu": BRICK[masonry]["nu"]}
        mats["joint"] = {"type": "interface", **JOINT[masonry]}
        uw["brick"] = w_mas
    elif tier == "macro":
        mats["masonry"] = {"type": "continuum", **CONTINUUM[masonry]}
        uw["masonry"] = w_mas
    else:
        cont = hybrid_continuum(masonry)
        h = HYBRID[masonry]
        ip = hybrid_parameter_expansion({"k_star": h["k_star"], "c_star": h["c_star"], "Gs_M": h["Gs_M"]},
                                        InterfaceParams(**JOINT[masonry]), ContinuumParams(**cont))
        mats["masonry"] = {"type": "continuum", **cont}
        mats["ring_joint"] = {"type": "interface", **ip.to_dict()}
        uw["masonry"] = w_mas
    mesh = {"n_len": 40, "n_thk": 2, "sub_per_brick": 3, "patch_length": 210.0, "backfill": None}
    if spec == "confined":
        mats["backfill"] = {"type": "backfill", **BACKFILL}
        fi = dict(FILL_INTERFACE)
        fi["fc"] = JOINT[masonry]["fc"]
        mats["fill_interface"] = {"type": "interface", **fi}
        mesh["backfill"] = {"horiz_extent": 2460.0, "cover": 300.0, "patch_length": 400.0}
        protocol = {"gravity": True, "gravity_steps": 4, "preloads": [],
                    "controlled_patch": "fill_L4", "control_rate": 0.2, "max_displacement": 40.0,
                    "partitions": ["fill_L4"]}
    elif spec == "bare":
        f0 = _kn_per_m(F0_BARE)
        protocol = {"gravity": True, "preloads": [{"patch": "L4", "force": f0, "steps": 4},
                                                  {"patch": "3L4", "force": f0, "steps": 4}],
                    "controlled_patch": "L4", "control_rate": 0.1, "max_displacement": 30.0}
    else:  # virtual test used for calibration: no self-weight, 16 kN preloads
        f0 = _kn_per_m(F0_CALIB)
        protocol = {"gravity": False, "preloads": [{"patch": "L4", "force": f0, "steps": 4},
                                                   {"patch": "3L4", "force": f0, "steps": 4}],
                    "controlled_patch": "L4", "control_rate": 0.1, "max_displacement": 30.0,
                    "partitions": ["L4", "3L4"]}
    return {"name": name, "tier": tier, "geometry": GeometrySpec().model_dump(), "mesh": mesh,
            "materials": mats, "unit_weight": uw, "protocol": protocol}


PRESETS = [f"{s}-{m}-{t}" for s in ("bare", "confined", "vt") for m in ("weak", "strong")
           for t in ("meso", "macro", "hybrid")]


def resolve(name_or_path) -> Scenario:
    """Load a scenario from a preset name or a JSON file."""
    p = Path(str(name_or_path))
    if p.suffix == ".json" or p.exists():
        return load_scenario(p)
    return parse_scenario(preset(str(name_or_path)))


def with_overrides(sc: Scenario, **protocol) -> Scenario:
    d = copy.deepcopy(sc.model_dump(mode="json"))
    d["protocol"].update(protocol)
    return parse_scenario(d)
