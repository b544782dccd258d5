"""SVG figures: load-deflection curves, Pareto fronts, partition overlays and meshes."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402

# svg output must not depend on the wall clock or a random hash salt
plt.rcParams["svg.hashsalt"] = "archcal"
_META = {"Date": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_traces(traces: dict, path, x: str = "d1", title: str = "") -> None:
    """Force against a monitor displacement for one or more labelled traces."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, tr in traces.items():
        ax.plot(getattr(tr, x), tr.force, label=label)
    ax.set_xlabel(f"{x} (mm)")
    ax.set_ylabel("F (kN/m)")
    if title:
        ax.set_title(title)
    ax.grid(True, lw=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def front_scatter(front, selected: int, path) -> None:
    om = front.omega
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(om[:, 0], om[:, 1] if om.shape[1] > 1 else np.zeros(len(om)), s=14, label="front")
    ax.scatter([om[selected, 0]], [om[selected, 1] if om.shape[1] > 1 else 0.0], s=60,
               facecolors="none", edgecolors="r", label=f"selected ({selected})")
    ax.set_xlabel("ω1")
    ax.set_ylabel("ω2")
    ax.grid(True, lw=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def partition_overlay(ref, curves: dict, name: str, path, highlight: str | None = None) -> None:
    """Partition force against partition displacement: reference and front members."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, tr in curves.items():
        _, F, u = tr.partition(name)
        strong = label == highlight
        ax.plot(u, F, lw=1.8 if strong else 0.6, color="r" if strong else "0.6",
                label=label if strong else None, zorder=3 if strong else 1)
    _, F, u = ref.partition(name)
    ax.plot(u, F, "k", lw=1.5, label="reference")
    ax.set_xlabel(f"u [{name}] (mm)")
    ax.set_ylabel(f"F [{name}] (kN/m)")
    ax.grid(True, lw=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_mesh(mesh, path, u: np.ndarray | None = None, scale: float = 1.0,
              iface_values: np.ndarray | None = None, title: str = "") -> None:
    """Element outlines (optionally deformed) with interfaces coloured by a scalar such as damage."""
    X = mesh.nodes.copy()
    if u is not None:
        X = X + scale * u.reshape(-1, 2)
    fig, ax = plt.subplots(figsize=(9, 4))
    polys = []
    for q in mesh.quads:
        polys.append(X[[q[0], q[4], q[1], q[5], q[2], q[6], q[3], q[7]]])
    for t in mesh.tris:
        polys.append(X[[t[0], t[3], t[1], t[4], t[2], t[5]]])
    ax.add_collection(PolyCollection(polys, facecolors="0.92", edgecolors="0.5", linewidths=0.2))
    if len(mesh.ifaces):
        segs = [X[[e[0], e[1], e[2]]] for e in mesh.ifaces]
        vals = np.zeros(len(segs)) if iface_values is None else np.asarray(iface_values)
        lc = LineCollection(segs, array=vals, cmap="inferno_r", linewidths=1.2)
        lc.set_clim(0.0, 1.0)
        ax.add_collection(lc)
        if iface_values is not None:
            fig.colorbar(lc, ax=ax, shrink=0.7, label="interface damage")
    ax.autoscale()
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_driver(table: dict, x: str, y: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(table[x], table[y])
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.grid(True, lw=0.3)
    _save(fig, path)


def plot_vtk_field(vtk_path, field: str, path, title: str = "") -> None:
    """Heatmap of one cell scalar from a VTK dump; interfaces are drawn as coloured lines."""
    from .mesh import read_vtk
    data = read_vtk(vtk_path)
    if field not in data["cell_scalars"]:
        raise KeyError(f"{vtk_path} has no cell field {field!r}")
    vals = data["cell_scalars"][field]
    X = data["points"]
    polys, pv, segs, sv = [], [], [], []
    for c, t, v in zip(data["cells"], data["types"], vals):
        if t == 23:
            polys.append(X[[c[0], c[4], c[1], c[5], c[2], c[6], c[3], c[7]]])
            pv.append(v)
        elif t == 22:
            polys.append(X[[c[0], c[3], c[1], c[4], c[2], c[5]]])
            pv.append(v)
        else:
            segs.append(X[[c[0], c[2], c[1]]])
            sv.append(v)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if hi <= lo:
        hi = lo + 1.0
    fig, ax = plt.subplots(figsize=(9, 4))
    pc = PolyCollection(polys, array=np.asarray(pv), cmap="viridis", edgecolors="none")
    pc.set_clim(lo, hi)
    ax.add_collection(pc)
    if segs:
        lc = LineCollection(segs, array=np.asarray(sv), cmap="viridis", linewidths=1.5)
        lc.set_clim(lo, hi)
        ax.add_collection(lc)
    fig.colorbar(pc, ax=ax, shrink=0.7, label=field)
    ax.autoscale()
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    _save(fig, path)
