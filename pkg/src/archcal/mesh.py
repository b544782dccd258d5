"""Parametric multi-ring arch geometries and their plane-strain discretisations.

Coordinates are in mm. The arch centreline is a circular segment through the
springings ``(0, 0)`` and ``(span, 0)`` with crown height ``rise``. Element
conventions:

* ``quad8``: serendipity quadrilateral, corners counter-clockwise then
  mid-side nodes (0-1, 1-2, 2-3, 3-0).
* ``tri6``: corners counter-clockwise then mid-side nodes (0-1, 1-2, 2-0).
* ``iface6``: quadratic zero-thickness interface ``[a0, a1, a2, b0, b1, b2]``
  where ``a_k``/``b_k`` are coincident and side ``b`` lies to the left of the
  direction ``a0 -> a2`` (the positive normal points from ``a`` to ``b``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


# joints of different rings closer than this fraction of the brick pitch are merged
JOINT_SNAP = 0.1


@dataclass(frozen=True)
class ArchGeometry:
    span: float = 5000.0
    rise: float = 1250.0
    thickness: float = 330.0
    width: float = 675.0
    n_rings: int = 3
    brick_length: float = 215.0
    brick_height: float | None = None
    joint_thickness: float = 10.0

    def __post_init__(self):
        if min(self.span, self.rise, self.thickness, self.width) <= 0:
            raise MeshError("span, rise, thickness and width must be positive")
        if self.n_rings < 1:
            raise MeshError("n_rings must be >= 1")
        if self.rise > self.span / 2 + 1e-9:
            raise MeshError("rise larger than half-span is not a circular segment arch")
        h = (self.thickness - (self.n_rings - 1) * self.joint_thickness) / self.n_rings
        if h <= 0:
            raise MeshError("joints thicker than the arch")
        if self.brick_height is None or abs(
                self.n_rings * self.brick_height + (self.n_rings - 1) * self.joint_thickness
                - self.thickness) > 1e-9 * self.thickness:
            object.__setattr__(self, "brick_height", h)

    @property
    def radius(self) -> float:
        return (self.span ** 2 / 4.0 + self.rise ** 2) / (2.0 * self.rise)

    @property
    def half_angle(self) -> float:
        return math.asin(self.span / 2.0 / self.radius)

    @property
    def centre(self) -> tuple[float, float]:
        return self.span / 2.0, self.rise - self.radius

    def point(self, phi, rho):
        """Coordinates at angle ``phi`` (from the vertical, positive to the right) and radius ``rho``."""
        xc, yc = self.centre
        return xc + rho * np.sin(phi), yc + rho * np.cos(phi)

    def angle_at_x(self, x: float, rho: float | None = None) -> float:
        rho = self.radius if rho is None else rho
        xc, _ = self.centre
        return math.asin(max(-1.0, min(1.0, (x - xc) / rho)))

    def ring_bounds(self, i: int) -> tuple[float, float]:
        t = self.thickness
        r0 = self.radius - t / 2.0
        return r0 + i * t / self.n_rings, r0 + (i + 1) * t / self.n_rings

    def ring_arc_length(self, i: int) -> float:
        lo, hi = self.ring_bounds(i)
        return 2.0 * self.half_angle * 0.5 * (lo + hi)

    def to_dict(self) -> dict:
        return dict(span=self.span, rise=self.rise, thickness=self.thickness,
                    width=self.width, n_rings=self.n_rings, brick_length=self.brick_length,
                    brick_height=self.brick_height, joint_thickness=self.joint_thickness)


@dataclass
class Mesh:
    nodes: np.ndarray
    quads: np.ndarray = field(default_factory=lambda: np.zeros((0, 8), dtype=np.int64))
    quad_mat: list = field(default_factory=list)
    tris: np.ndarray = field(default_factory=lambda: np.zeros((0, 6), dtype=np.int64))
    tri_mat: list = field(default_factory=list)
    ifaces: np.ndarray = field(default_factory=lambda: np.zeros((0, 6), dtype=np.int64))
    iface_mat: list = field(default_factory=list)
    iface_kind: list = field(default_factory=list)
    quad_ring: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    node_sets: dict = field(default_factory=dict)
    load_patches: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_dof(self) -> int:
        return 2 * len(self.nodes)

    def used_nodes(self) -> np.ndarray:
        parts = [self.quads.ravel(), self.tris.ravel(), self.ifaces.ravel()]
        return np.unique(np.concatenate(parts)) if any(len(p) for p in parts) else np.zeros(0, int)

    # -- serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "archcal-mesh/1",
            "nodes": self.nodes.tolist(),
            "quads": self.quads.tolist(),
            "quad_mat": list(self.quad_mat),
            "quad_ring": self.quad_ring.tolist(),
            "tris": self.tris.tolist(),
            "tri_mat": list(self.tri_mat),
            "ifaces": self.ifaces.tolist(),
            "iface_mat": list(self.iface_mat),
            "iface_kind": list(self.iface_kind),
            "node_sets": {k: np.asarray(v).tolist() for k, v in self.node_sets.items()},
            "load_patches": {k: {"edges": np.asarray(v["edges"]).tolist(),
                                 "length": float(v["length"]),
                                 "centre": float(v["centre"])}
                             for k, v in self.load_patches.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        def arr(key, width):
            a = np.asarray(d.get(key, []), dtype=np.int64)
            return a.reshape(-1, width)
        return cls(nodes=np.asarray(d["nodes"], dtype=float).reshape(-1, 2),
                   quads=arr("quads", 8), quad_mat=list(d.get("quad_mat", [])),
                   quad_ring=np.asarray(d.get("quad_ring", []), dtype=np.int64),
                   tris=arr("tris", 6), tri_mat=list(d.get("tri_mat", [])),
                   ifaces=arr("ifaces", 6), iface_mat=list(d.get("iface_mat", [])),
                   iface_kind=list(d.get("iface_kind", [])),
                   node_sets={k: np.asarray(v, dtype=np.int64) for k, v in d["node_sets"].items()},
                   load_patches={k: {"edges": np.asarray(v["edges"], dtype=np.int64).reshape(-1, 3),
                                     "length": v["length"], "centre": v["centre"]}
                                 for k, v in d["load_patches"].items()},
                   meta=d.get("meta", {}))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "Mesh":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

class _NodeTable:
    """Append-only node store; identical keys map to the same node id."""

    def __init__(self):
        self.coords: list[tuple[float, float]] = []
        self.index: dict = {}

    def get(self, key, xy) -> int:
        nid = self.index.get(key)
        if nid is None:
            nid = len(self.coords)
            self.index[key] = nid
            self.coords.append((float(xy[0]), float(xy[1])))
        return nid

    def new(self, xy) -> int:
        self.coords.append((float(xy[0]), float(xy[1])))
        return len(self.coords) - 1

    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float).reshape(-1, 2)


def _ring_joint_angles(geom: ArchGeometry, i: int) -> tuple[np.ndarray, float]:
    th0 = geom.half_angle
    n_joints = int(round(geom.ring_arc_length(i) / (geom.brick_length + geom.joint_thickness)))
    if n_joints < 1:
        raise MeshError(f"ring {i} arc admits fewer than 2 bricks")
    pitch = 2.0 * th0 / n_joints
    # alternate quarter/three-quarter starts: adjacent rings are half a brick apart
    shift = 0.25 if i % 2 == 0 else 0.75
    return -th0 + (np.arange(n_joints) + shift) * pitch, pitch


def _union_angles(geom: ArchGeometry, sub_per_brick: int = 2):
    """Column angles shared by all rings plus, per ring, the joint angle set."""
    th0 = geom.half_angle
    mandatory = [-th0, th0]
    optional = []
    joints = []
    min_pitch = np.inf
    for i in range(geom.n_rings):
        ja, pitch = _ring_joint_angles(geom, i)
        # snap onto joints of earlier rings that nearly coincide, avoiding slivers
        placed = np.asarray(mandatory[2:])
        if len(placed):
            for k, a in enumerate(ja):
                near = np.argmin(np.abs(placed - a))
                if abs(placed[near] - a) < JOINT_SNAP * pitch:
                    ja[k] = placed[near]
        joints.append(ja)
        min_pitch = min(min_pitch, pitch)
        mandatory.extend(ja.tolist())
        bounds = np.concatenate([[-th0], ja, [th0]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            n_sub = max(1, int(math.ceil((b - a) / (pitch / sub_per_brick) - 0.01)))
            for k in range(1, n_sub):
                optional.append(a + (b - a) * k / n_sub)
    mand = np.unique(np.round(np.asarray(mandatory), 14))
    keep = list(mand)
    tol = 0.2 * min_pitch / sub_per_brick
    for a in sorted(optional):
        if np.min(np.abs(np.asarray(keep) - a)) > tol:
            keep.append(a)
    return np.sort(np.asarray(keep)), joints


def _quad_from_grid(c00, c10, c11, c01, m_bot, m_right, m_top, m_left):
    return [c00, c10, c11, c01, m_bot, m_right, m_top, m_left]


def _arch_patches(geom: ArchGeometry, mesh_nodes: np.ndarray, extrados_edges: list,
                  patch_len: float, centres: dict) -> dict:
    """Patches on the extrados: edges whose midpoint x lies within the window."""
    patches = {}
    e = np.asarray(extrados_edges, dtype=np.int64)
    mids = mesh_nodes[e[:, 1]]
    for name, xc in centres.items():
        sel = np.where(np.abs(mids[:, 0] - xc) <= patch_len / 2.0)[0]
        if len(sel) == 0:
            sel = np.array([int(np.argmin(np.abs(mids[:, 0] - xc)))])
        length = float(sum(_edge_length(mesh_nodes, e[k]) for k in sel))
        patches[name] = {"edges": e[sel], "length": length, "centre": float(xc)}
    return patches


def _edge_length(nodes, edge) -> float:
    # 3-point Gauss on the quadratic edge
    g = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
    w = np.array([5.0, 8.0, 5.0]) / 9.0
    x = nodes[list(edge)]
    total = 0.0
    for xi, wi in zip(g, w):
        dN = np.array([xi - 0.5, -2.0 * xi, xi + 0.5])
        total += wi * np.linalg.norm(dN @ x)
    return total


def default_patch_centres(geom: ArchGeometry) -> dict:
    L = geom.span
    return {"L4": L / 4.0, "3L4": 3.0 * L / 4.0, "L2": L / 2.0, "L8": L / 8.0}


def _monitor_nodes(geom, nodes, intrados_nodes):
    out = {}
    ids = np.asarray(intrados_nodes)
    for name, xc in {"d1": geom.span / 4.0, "d2": 3.0 * geom.span / 4.0,
                     "mid": geom.span / 2.0}.items():
        out[f"monitor_{name}"] = np.array([ids[np.argmin(np.abs(nodes[ids, 0] - xc))]])
    return out


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def generate_mesoscale_arch(geom: ArchGeometry, patch_length: float = 210.0,
                            patch_centres: dict | None = None,
                            sub_per_brick: int = 3) -> Mesh:
    """Brick-resolved arch: elastic brick quads joined by radial and circumferential interfaces."""
    for i in range(geom.n_rings):
        if geom.ring_arc_length(i) < 2.0 * (geom.brick_length + geom.joint_thickness) * 0.999:
            raise MeshError(f"ring {i} arc admits fewer than 2 bricks")
    angles, joints = _union_angles(geom, sub_per_brick)
    nt = _NodeTable()
    quads, quad_ring, ifaces, kinds = [], [], [], []
    # top/bottom face nodes per ring and column, for circumferential interfaces
    faces_top: dict = {}
    faces_bot: dict = {}
    intrados, extrados_edges = [], []
    left_spr, right_spr = [], []
    n_col = len(angles) - 1
    for i in range(geom.n_rings):
        r_lo, r_hi = geom.ring_bounds(i)
        radii = np.linspace(r_lo, r_hi, 5)
        joint_set = set(np.round(joints[i], 14).tolist())
        # brick index per column: increments after each own joint
        brick_of_col = np.zeros(n_col, dtype=int)
        b = 0
        for c in range(n_col):
            if c > 0 and round(angles[c], 14) in joint_set:
                b += 1
            brick_of_col[c] = b

        def corner(c_line, k, brick):
            a = angles[c_line]
            key = ("m", i, c_line, k, brick if round(a, 14) in joint_set else -1)
            return nt.get(key, geom.point(a, radii[k]))

        def mid_col(c, k):
            a = 0.5 * (angles[c] + angles[c + 1])
            return nt.get(("mc", i, c, k), geom.point(a, radii[k]))

        for c in range(n_col):
            br = brick_of_col[c]
            for layer in range(2):
                k0, k1, k2 = 2 * layer, 2 * layer + 1, 2 * layer + 2
                n00 = corner(c, k0, br)
                n10 = corner(c + 1, k0, br)
                n11 = corner(c + 1, k2, br)
                n01 = corner(c, k2, br)
                quads.append(_quad_from_grid(n00, n10, n11, n01,
                                             mid_col(c, k0), corner(c + 1, k1, br),
                                             mid_col(c, k2), corner(c, k1, br)))
                quad_ring.append(i)
            faces_bot[(i, c)] = (corner(c, 0, br), mid_col(c, 0), corner(c + 1, 0, br))
            faces_top[(i, c)] = (corner(c, 4, br), mid_col(c, 4), corner(c + 1, 4, br))
            if i == 0:
                intrados.extend(faces_bot[(i, c)])
            if i == geom.n_rings - 1:
                extrados_edges.append(faces_top[(i, c)])
        # radial joints: a = brick on the left, traversed outer -> inner
        for c_line in range(1, n_col):
            if round(angles[c_line], 14) not in joint_set:
                continue
            bl = brick_of_col[c_line - 1]
            brr = brick_of_col[c_line]
            for layer in range(2):
                ks = (2 * layer + 2, 2 * layer + 1, 2 * layer)
                a_side = [corner(c_line, k, bl) for k in ks]
                b_side = [corner(c_line, k, brr) for k in ks]
                ifaces.append(a_side + b_side)
                kinds.append("radial")
        left_spr.extend(corner(0, k, 0) for k in range(5))
        right_spr.extend(corner(n_col, k, brick_of_col[-1]) for k in range(5))
    # circumferential joints: a = inner ring top face, b = outer ring bottom face
    for i in range(geom.n_rings - 1):
        for c in range(n_col):
            ifaces.append(list(faces_top[(i, c)]) + list(faces_bot[(i + 1, c)]))
            kinds.append("circumferential")
    nodes = nt.array()
    mesh = Mesh(nodes=nodes, quads=np.asarray(quads, dtype=np.int64),
                quad_mat=["brick"] * len(quads), quad_ring=np.asarray(quad_ring, dtype=np.int64),
                ifaces=np.asarray(ifaces, dtype=np.int64).reshape(-1, 6),
                iface_mat=["joint"] * len(ifaces), iface_kind=kinds)
    mesh.node_sets = {"left_springing": np.unique(left_spr), "right_springing": np.unique(right_spr),
                      "intrados": np.asarray(intrados, dtype=np.int64),
                      "extrados": np.unique(np.asarray(extrados_edges).ravel())}
    mesh.node_sets.update(_monitor_nodes(geom, nodes, intrados))
    mesh.load_patches = _arch_patches(geom, nodes, extrados_edges, patch_length,
                                      patch_centres or default_patch_centres(geom))
    mesh.meta = {"tier": "meso", "geometry": geom.to_dict(), "extrados_edges":
                 np.asarray(extrados_edges).tolist(),
                 "radial_joints_per_ring": [len(j) for j in joints]}
    return mesh


def generate_macroscale_arch(geom: ArchGeometry, n_len: int = 40, n_thk: int = 2,
                             hybrid: bool = False, patch_length: float = 210.0,
                             patch_centres: dict | None = None) -> Mesh:
    """Regular curved grid of continuum quads, optionally split at mid-thickness by interfaces."""
    if n_thk < 2:
        raise MeshError("at least two continuum elements are required through the thickness")
    if hybrid and n_thk % 2:
        raise MeshError("hybrid meshes need an even number of elements through the thickness")
    if n_len < 1:
        raise MeshError("n_len must be >= 1")
    th0 = geom.half_angle
    t = geom.thickness
    angles = np.linspace(-th0, th0, n_len + 1)
    mid_angles = 0.5 * (angles[:-1] + angles[1:])
    radii = np.linspace(geom.radius - t / 2.0, geom.radius + t / 2.0, 2 * n_thk + 1)
    k_split = n_thk  # radius index (in the 2*n_thk+1 list) of the mid-thickness line
    nt = _NodeTable()

    def side(k, upper):
        # nodes on the split line belong to one half or the other
        if hybrid and k == k_split:
            return 1 if upper else 0
        return 0

    def corner(c, k, upper):
        return nt.get(("c", c, k, side(k, upper)), geom.point(angles[c], radii[k]))

    def mid(c, k, upper):
        return nt.get(("m", c, k, side(k, upper)), geom.point(mid_angles[c], radii[k]))

    quads, ifaces = [], []
    intrados, extrados_edges = [], []
    for c in range(n_len):
        for j in range(n_thk):
            k0, k1, k2 = 2 * j, 2 * j + 1, 2 * j + 2
            upper = j >= n_thk // 2
            quads.append(_quad_from_grid(corner(c, k0, upper), corner(c + 1, k0, upper),
                                         corner(c + 1, k2, upper), corner(c, k2, upper),
                                         mid(c, k0, upper), corner(c + 1, k1, upper),
                                         mid(c, k2, upper), corner(c, k1, upper)))
        intrados.extend([corner(c, 0, False), mid(c, 0, False), corner(c + 1, 0, False)])
        extrados_edges.append((corner(c, 2 * n_thk, True), mid(c, 2 * n_thk, True),
                               corner(c + 1, 2 * n_thk, True)))
        if hybrid:
            a = [corner(c, k_split, False), mid(c, k_split, False), corner(c + 1, k_split, False)]
            b = [corner(c, k_split, True), mid(c, k_split, True), corner(c + 1, k_split, True)]
            ifaces.append(a + b)
    nodes = nt.array()
    left = [corner(0, k, up) for k in range(2 * n_thk + 1) for up in (False, True)]
    right = [corner(n_len, k, up) for k in range(2 * n_thk + 1) for up in (False, True)]
    mesh = Mesh(nodes=nodes, quads=np.asarray(quads, dtype=np.int64),
                quad_mat=["masonry"] * len(quads),
                quad_ring=np.full(len(quads), -1, dtype=np.int64),
                ifaces=np.asarray(ifaces, dtype=np.int64).reshape(-1, 6),
                iface_mat=["ring_joint"] * len(ifaces),
                iface_kind=["circumferential"] * len(ifaces))
    mesh.node_sets = {"left_springing": np.unique(left), "right_springing": np.unique(right),
                      "intrados": np.asarray(intrados, dtype=np.int64),
                      "extrados": np.unique(np.asarray(extrados_edges).ravel())}
    mesh.node_sets.update(_monitor_nodes(geom, nodes, intrados))
    mesh.load_patches = _arch_patches(geom, nodes, extrados_edges, patch_length,
                                      patch_centres or default_patch_centres(geom))
    mesh.meta = {"tier": "hybrid" if hybrid else "macro", "geometry": geom.to_dict(),
                 "extrados_edges": np.asarray(extrados_edges).tolist(),
                 "n_len": n_len, "n_thk": n_thk}
    return mesh


def generate_backfill(arch: Mesh, geom: ArchGeometry, horiz_extent: float = 2460.0,
                      cover: float = 300.0, patch_length: float = 400.0,
                      n_side: int = 10, n_vert: int = 6,
                      patch_centres: dict | None = None) -> Mesh:
    """Add a tri6 backfill above the arch, tied to the extrados by interfaces.

    Returns a new mesh containing the arch plus the fill.
    """
    if cover <= 0:
        raise MeshError("backfill cover must be positive")
    ext = np.asarray(arch.meta["extrados_edges"], dtype=np.int64)
    nodes0 = arch.nodes
    y_top = geom.rise + geom.thickness / 2.0 + cover
    crown_ext = nodes0[ext[:, [0, 2]].ravel(), 1].max()
    if y_top <= crown_ext + 1e-6:
        raise MeshError("backfill top does not clear the arch extrados")
    x_lo = nodes0[ext[0, 0], 0]
    x_hi = nodes0[ext[-1, 2], 0]
    y_base = nodes0[ext[0, 0], 1]
    x_left = 0.0 - horiz_extent
    x_right = geom.span + horiz_extent
    if x_left >= x_lo or x_right <= x_hi:
        raise MeshError("backfill horizontal extent does not cover the arch")
    nt = _NodeTable()
    for k, xy in enumerate(nodes0):
        nt.index[("arch", k)] = k
        nt.coords.append((float(xy[0]), float(xy[1])))
    # bottom profile: (x, y, fill-side bottom node key) per column line and bottom mids
    side_l = np.linspace(x_left, x_lo, n_side + 1)[:-1]
    side_r = np.linspace(x_hi, x_right, n_side + 1)[1:]
    cols = []  # (x, y_bottom, arch node id or None)
    for x in side_l:
        cols.append((x, y_base, None))
    for e in ext:
        cols.append((nodes0[e[0], 0], nodes0[e[0], 1], int(e[0])))
    cols.append((nodes0[ext[-1, 2], 0], nodes0[ext[-1, 2], 1], int(ext[-1, 2])))
    for x in side_r:
        cols.append((x, y_base, None))
    n_cols = len(cols)
    n_l = len(side_l)
    bottom_mid_arch = {n_l + k: int(e[1]) for k, e in enumerate(ext)}

    def ygrid(c, j):
        x, yb, _ = cols[c]
        return yb + (y_top - yb) * j / n_vert

    def vnode(c, jj):
        # jj indexes half-rows: 0..2*n_vert
        x, yb, _ = cols[c]
        return nt.get(("fv", c, jj), (x, yb + (y_top - yb) * jj / (2 * n_vert)))

    def hmid(c, jj):
        # node halfway between column lines c and c+1 at half-row jj
        if jj == 0 and c in bottom_mid_arch:
            xy = nodes0[bottom_mid_arch[c]]
        else:
            xa, yba, _ = cols[c]
            xb, ybb, _ = cols[c + 1]
            ya = yba + (y_top - yba) * jj / (2 * n_vert)
            yb_ = ybb + (y_top - ybb) * jj / (2 * n_vert)
            xy = (0.5 * (xa + xb), 0.5 * (ya + yb_))
        return nt.get(("fh", c, jj), xy)

    def cnode(c, jj):
        # cell-centre-line node for diagonals
        xa, yba, _ = cols[c]
        xb, ybb, _ = cols[c + 1]
        ya = yba + (y_top - yba) * (jj - 1) / (2 * n_vert)
        yb2 = ybb + (y_top - ybb) * (jj + 1) / (2 * n_vert)
        return nt.get(("fd", c, jj), (0.5 * (xa + xb), 0.5 * (ya + yb2)))

    tris = []
    for c in range(n_cols - 1):
        for j in range(n_vert):
            j0, j1, j2 = 2 * j, 2 * j + 1, 2 * j + 2
            p00, p10 = vnode(c, j0), vnode(c + 1, j0)
            p11, p01 = vnode(c + 1, j2), vnode(c, j2)
            mb, mt = hmid(c, j0), hmid(c, j2)
            ml, mr = vnode(c, j1), vnode(c + 1, j1)
            md = cnode(c, j1)
            # diagonal p00 -> p11
            tris.append([p00, p10, p11, mb, mr, md])
            tris.append([p00, p11, p01, md, mt, ml])
    nodes = nt.array()
    tris = np.asarray(tris, dtype=np.int64)
    _check_tri_orientation(nodes, tris)
    # arch-fill interfaces along the extrados: a = arch, b = fill bottom
    new_if = []
    for k, e in enumerate(ext):
        c = n_l + k
        b = [vnode(c, 0), hmid(c, 0), vnode(c + 1, 0)]
        new_if.append(list(map(int, e)) + b)
    base = [vnode(c, 0) for c in list(range(n_l + 1)) + list(range(n_cols - n_side - 1, n_cols))]
    base += [hmid(c, 0) for c in list(range(n_l)) + list(range(n_cols - n_side - 1, n_cols - 1))]
    sides = [vnode(0, jj) for jj in range(2 * n_vert + 1)] + \
            [vnode(n_cols - 1, jj) for jj in range(2 * n_vert + 1)]
    top_edges = [(vnode(c, 2 * n_vert), hmid(c, 2 * n_vert), vnode(c + 1, 2 * n_vert))
                 for c in range(n_cols - 1)]
    mesh = Mesh(nodes=nodes, quads=arch.quads.copy(), quad_mat=list(arch.quad_mat),
                quad_ring=arch.quad_ring.copy(),
                tris=tris, tri_mat=["backfill"] * len(tris),
                ifaces=np.vstack([arch.ifaces.reshape(-1, 6),
                                  np.asarray(new_if, dtype=np.int64)]),
                iface_mat=list(arch.iface_mat) + ["fill_interface"] * len(new_if),
                iface_kind=list(arch.iface_kind) + ["extrados"] * len(new_if))
    mesh.node_sets = {k: v.copy() for k, v in arch.node_sets.items()}
    mesh.node_sets["fill_base"] = np.unique(base)
    mesh.node_sets["fill_sides"] = np.unique(sides)
    mesh.load_patches = dict(arch.load_patches)
    top = np.asarray(top_edges, dtype=np.int64)
    mids = nodes[top[:, 1]]
    for name, xc in (patch_centres or default_patch_centres(geom)).items():
        sel = np.where(np.abs(mids[:, 0] - xc) <= patch_length / 2.0)[0]
        if len(sel) == 0:
            sel = np.array([int(np.argmin(np.abs(mids[:, 0] - xc)))])
        mesh.load_patches[f"fill_{name}"] = {
            "edges": top[sel], "centre": float(xc),
            "length": float(sum(_edge_length(nodes, top[k]) for k in sel))}
    mesh.meta = dict(arch.meta)
    mesh.meta.update({"backfill": {"horiz_extent": horiz_extent, "cover": cover,
                                   "y_top": y_top}, "top_edges": top.tolist()})
    return mesh


def _check_tri_orientation(nodes, tris):
    p = nodes[tris[:, :3]]
    area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(area2 <= 0):
        raise MeshError("backfill region self-intersects (cover too small for the arch)")


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def quad8_jacobians(mesh: Mesh, order: int = 3) -> np.ndarray:
    """Jacobian determinants at the Gauss points of every quad8 (shape ``n_quads x order**2``)."""
    from .elements import quad8_dshape, gauss_2d
    pts, _ = gauss_2d(order)
    out = np.empty((len(mesh.quads), len(pts)))
    for g, (xi, eta) in enumerate(pts):
        dN = quad8_dshape(xi, eta)
        X = mesh.nodes[mesh.quads]  # (ne, 8, 2)
        J = np.einsum("ak,eaj->ekj", dN, X)
        out[:, g] = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    return out


def connected_components(mesh: Mesh, include_interfaces: bool = False) -> int:
    """Number of connected element groups (union-find over shared nodes)."""
    elems = [list(q) for q in mesh.quads] + [list(t) for t in mesh.tris]
    if include_interfaces:
        elems += [list(f) for f in mesh.ifaces]
    parent = {}

    def find(a):
        while parent.setdefault(a, a) != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for el in elems:
        r0 = find(el[0])
        for n in el[1:]:
            r = find(n)
            if r != r0:
                parent[r] = r0
    roots = {find(el[0]) for el in elems}
    return len(roots)


def brick_area(mesh: Mesh) -> float:
    from .elements import quad8_dshape, gauss_2d
    pts, wts = gauss_2d(3)
    total = 0.0
    X = mesh.nodes[mesh.quads]
    for (xi, eta), w in zip(pts, wts):
        dN = quad8_dshape(xi, eta)
        J = np.einsum("ak,eaj->ekj", dN, X)
        total += w * np.sum(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
    return float(total)


def annulus_area(geom: ArchGeometry) -> float:
    r_in = geom.radius - geom.thickness / 2.0
    r_out = geom.radius + geom.thickness / 2.0
    return geom.half_angle * (r_out ** 2 - r_in ** 2)


# ---------------------------------------------------------------------------
# legacy VTK export
# ---------------------------------------------------------------------------

# VTK cell types: quadratic quad, quadratic triangle, quadratic edge
_VTK_QUAD8, _VTK_TRI6, _VTK_EDGE3 = 23, 22, 21


def write_vtk(mesh: Mesh, path, point_vectors: dict | None = None,
              cell_scalars: dict | None = None, title: str = "archcal mesh") -> None:
    """Write an ASCII unstructured grid.

    Cells are ordered quads, triangles, then interfaces (drawn as side ``a``
    quadratic edges). ``cell_scalars`` arrays must follow the same order.
    """
    lines = ["# vtk DataFile Version 3.0", title[:250], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(mesh.nodes)} double"]
    lines += [f"{x:.10g} {y:.10g} 0" for x, y in mesh.nodes]
    cells = [(_VTK_QUAD8, q) for q in mesh.quads] + [(_VTK_TRI6, t) for t in mesh.tris]
    # VTK quadratic edge order: end, end, middle
    cells += [(_VTK_EDGE3, (f[0], f[2], f[1])) for f in mesh.ifaces]
    size = sum(len(c) + 1 for _, c in cells)
    lines.append(f"CELLS {len(cells)} {size}")
    lines += [" ".join(map(str, [len(c), *c])) for _, c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(t) for t, _ in cells]
    if cell_scalars:
        lines.append(f"CELL_DATA {len(cells)}")
        for name, vals in cell_scalars.items():
            vals = np.asarray(vals, dtype=float)
            if len(vals) != len(cells):
                raise ValueError(f"cell field {name} has {len(vals)} values, expected {len(cells)}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.8g}" for v in vals]
    if point_vectors:
        lines.append(f"POINT_DATA {len(mesh.nodes)}")
        for name, vals in point_vectors.items():
            vals = np.asarray(vals, dtype=float).reshape(-1, 2)
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.10g} {b:.10g} 0" for a, b in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict:
    """Read a file written by :func:`write_vtk`: points, cells, cell types and data fields."""
    lines = Path(path).read_text().splitlines()
    out: dict = {"points": None, "cells": [], "types": [], "cell_scalars": {}, "point_vectors": {}}
    n = None
    i = 0
    while i < len(lines):
        ln = lines[i]
        head = ln.split()[0] if ln.strip() else ""
        if head == "POINTS":
            k = int(ln.split()[1])
            out["points"] = np.array([[float(v) for v in r.split()[:2]] for r in lines[i + 1:i + 1 + k]])
            i += 1 + k
            continue
        if head == "CELLS":
            k = int(ln.split()[1])
            out["cells"] = [np.array(r.split()[1:], dtype=np.int64) for r in lines[i + 1:i + 1 + k]]
            i += 1 + k
            continue
        if head == "CELL_TYPES":
            k = int(ln.split()[1])
            out["types"] = [int(r) for r in lines[i + 1:i + 1 + k]]
            i += 1 + k
            continue
        if head in ("CELL_DATA", "POINT_DATA"):
            n = int(ln.split()[1])
        elif head == "SCALARS" and n is not None:
            out["cell_scalars"][ln.split()[1]] = np.array([float(v) for v in lines[i + 2:i + 2 + n]])
            i += 2 + n
            continue
        elif head == "VECTORS" and n is not None:
            out["point_vectors"][ln.split()[1]] = np.array(
                [[float(v) for v in r.split()[:2]] for r in lines[i + 1:i + 1 + n]])
            i += 1 + n
            continue
        i += 1
    return out


def read_vtk_cell_scalars(path) -> dict:
    """Cell scalar fields of a file written by :func:`write_vtk`."""
    return read_vtk(path)["cell_scalars"]
