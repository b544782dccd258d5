"""Multiscale calibration: stress-power error functionals, NSGA-II and Pareto-front selection.

A macroscale candidate is compared with a mesoscale reference through the
boundary power of each load partition: ``t^M u'^M - t^m u'^m``. The squared
error rate integrated over the test and normalised by a reference energy gives
one objective per partition; NSGA-II searches the parameter box for the
non-dominated set.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .continuum import ContinuumParams, shear_strength
from .interface import InterfaceParams

log = logging.getLogger(__name__)

FICTITIOUS_THICKNESS = 1.0  # mm
GRID_POINTS = 200
NEIGHBOURHOOD = 2.5


class TieRuleError(ValueError):
    pass


class TraceAlignmentError(ValueError):
    pass


class CalibrationConfigError(ValueError):
    pass


class CalibrationAbort(RuntimeError):
    """Too many failed evaluations in one generation; the ledger is kept for resuming."""


# ---------------------------------------------------------------------------
# tie rules for the hybrid ring joint
# ---------------------------------------------------------------------------

def hybrid_parameter_expansion(unknowns: dict, meso: InterfaceParams,
                               continuum: ContinuumParams) -> InterfaceParams:
    """Macroscale ring-joint parameters from the nondimensional unknowns ``k_star``, ``c_star``, ``Gs_M``."""
    if meso.c <= 0 or meso.Gs <= 0:
        raise TieRuleError("tie rules need positive mesoscale cohesion and mode-II energy")
    f_v0, _ = shear_strength((0.0, 0.0), continuum)
    kt = unknowns["k_star"] * continuum.E / (2.0 * FICTITIOUS_THICKNESS * (1.0 + continuum.nu))
    kn = kt * meso.kn / meso.kt
    c = unknowns["c_star"] * f_v0
    ft = c * meso.ft / meso.c
    Gs = unknowns.get("Gs_M", meso.Gs)
    Gt = Gs * meso.Gt / meso.Gs
    return InterfaceParams(kn=kn, kt=kt, ft=ft, fc=meso.fc, c=c, tan_phi=meso.tan_phi,
                           tan_phi_g=meso.tan_phi_g, Gt=Gt, Gs=Gs, Gc=meso.Gc)


# ---------------------------------------------------------------------------
# error functionals
# ---------------------------------------------------------------------------

def error_rate(F_macro, udot_macro, F_meso, udot_meso):
    """Stress-power mismatch ``F^M u'^M - F^m u'^m`` (scalars or arrays, summed over trailing channels)."""
    pm = np.asarray(F_macro, float) * np.asarray(udot_macro, float)
    pr = np.asarray(F_meso, float) * np.asarray(udot_meso, float)
    d = pm - pr
    return d if d.ndim <= 1 else d.sum(axis=-1)


def _channel(trace, name):
    if hasattr(trace, "partition"):
        return trace.partition(name)
    t, F, u = trace[name]
    return np.asarray(t, float), np.asarray(F, float), np.asarray(u, float)


def resample(t, F, u, grid):
    """Piecewise-linear resampling; beyond the last sample the force is zero and the displacement frozen."""
    t = np.asarray(t, float)
    if len(t) < 2:
        raise TraceAlignmentError("trace has fewer than two samples")
    Fg = np.interp(grid, t, F, right=0.0)
    ug = np.interp(grid, t, u)
    return Fg, ug


def common_grid(meso_trace, macro_trace, names, n: int = GRID_POINTS):
    tm = np.asarray(_channel(meso_trace, names[0])[0])
    tM = np.asarray(_channel(macro_trace, names[0])[0])
    if len(tm) < 2 or len(tM) < 2:
        raise TraceAlignmentError("trace has fewer than two samples")
    if tM[0] > tm[-1] or tm[0] > tM[-1] or min(tm[-1], tM[-1]) <= max(tm[0], tM[0]):
        raise TraceAlignmentError("macro and meso traces do not overlap in pseudo-time")
    return np.linspace(tm[0], tm[-1], n)


def power_series(trace, name, grid):
    t, F, u = _channel(trace, name)
    Fg, ug = resample(t, F, u, grid)
    return Fg, np.gradient(ug, grid)


def error_rate_series(macro_trace, meso_trace, name, grid):
    FM, vM = power_series(macro_trace, name, grid)
    Fm, vm = power_series(meso_trace, name, grid)
    return error_rate(FM, vM, Fm, vm)


def reference_normaliser(meso_trace, names, grid) -> float:
    """Squared reference boundary work divided by the test duration."""
    work = 0.0
    for n in names:
        F, v = power_series(meso_trace, n, grid)
        work += np.trapezoid(F * v, grid)
    T = grid[-1] - grid[0]
    nu = work ** 2 / T
    if not np.isfinite(nu) or nu <= 0:
        raise CalibrationConfigError("reference test does no work; the error normaliser is zero")
    return float(nu)


def error_functional(macro_trace, meso_trace, name, grid=None, normaliser=None,
                     names_for_normaliser=None, n: int = GRID_POINTS) -> float:
    """Normalised squared stress-power error of one partition."""
    names = names_for_normaliser or [name]
    if grid is None:
        grid = common_grid(meso_trace, macro_trace, [name], n)
    if normaliser is None:
        normaliser = reference_normaliser(meso_trace, names, grid)
    if normaliser <= 0:
        raise CalibrationConfigError("zero normaliser")
    e = error_rate_series(macro_trace, meso_trace, name, grid)
    return float(np.trapezoid(e ** 2, grid) / normaliser)


def objectives(macro_trace, meso_trace, names, n: int = GRID_POINTS, per_partition: bool = False):
    grid = common_grid(meso_trace, macro_trace, names, n)
    out = []
    nu_global = reference_normaliser(meso_trace, names, grid)
    for name in names:
        nu = reference_normaliser(meso_trace, [name], grid) if per_partition else nu_global
        out.append(error_functional(macro_trace, meso_trace, name, grid, nu))
    return np.array(out)


def global_error(macro_trace, meso_trace, names, n: int = GRID_POINTS) -> float:
    """Single functional over all partitions: the error rates are summed before squaring."""
    grid = common_grid(meso_trace, macro_trace, names, n)
    e = sum(error_rate_series(macro_trace, meso_trace, k, grid) for k in names)
    return float(np.trapezoid(e ** 2, grid) / reference_normaliser(meso_trace, names, grid))


def volume_error_rate(sig_macro, epsdot_macro, sig_meso, epsdot_meso, volumes) -> float:
    """Volume-partition error rate: sum over cells of ``(sig^M:eps'^M - sig^m:eps'^m) V``."""
    pM = np.einsum("ij,ij->i", np.atleast_2d(sig_macro), np.atleast_2d(epsdot_macro))
    pm = np.einsum("ij,ij->i", np.atleast_2d(sig_meso), np.atleast_2d(epsdot_meso))
    return float(np.sum((pM - pm) * np.asarray(volumes, float)))


def nrmse(model_trace, ref_trace, up_to_peak: bool = False) -> float:
    """Force RMS error on the reference ``d1`` abscissa, divided by the reference peak force."""
    d_ref = np.asarray(ref_trace.d1)
    F_ref = np.asarray(ref_trace.force)
    if up_to_peak:
        k = int(np.argmax(F_ref)) + 1
        d_ref, F_ref = d_ref[:k], F_ref[:k]
    d_m = np.asarray(model_trace.d1)
    F_m = np.asarray(model_trace.force)
    # keep the monotone part of the model abscissa
    keep = np.concatenate([[True], np.diff(np.maximum.accumulate(d_m)) > 0])
    Fi = np.interp(d_ref, d_m[keep], F_m[keep], right=0.0)
    return float(np.sqrt(np.mean((Fi - F_ref) ** 2)) / np.max(np.abs(F_ref)))


# ---------------------------------------------------------------------------
# NSGA-II
# ---------------------------------------------------------------------------

@dataclass
class GAConfig:
    population: int = 32
    generations: int = 40
    eta_c: float = 15.0
    eta_m: float = 20.0
    p_crossover: float = 0.9
    p_mutation: float | None = None  # default 1 / n_unknowns
    seed: int = 0

    def __post_init__(self):
        if self.population < 8 or self.population % 2:
            raise CalibrationConfigError("population must be even and at least 8")
        if self.generations < 1:
            raise CalibrationConfigError("at least one generation is required")


def dominates(a, b) -> bool:
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(F: np.ndarray) -> list:
    """Fronts as lists of indices (fast non-dominated sorting)."""
    n = len(F)
    S = [[] for _ in range(n)]
    cnt = np.zeros(n, int)
    fronts = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(F[i], F[j]):
                S[i].append(j)
                cnt[j] += 1
            elif dominates(F[j], F[i]):
                S[j].append(i)
                cnt[i] += 1
    fronts[0] = [i for i in range(n) if cnt[i] == 0]
    k = 0
    while fronts[k]:
        nxt = []
        for i in fronts[k]:
            for j in S[i]:
                cnt[j] -= 1
                if cnt[j] == 0:
                    nxt.append(j)
        k += 1
        fronts.append(sorted(nxt))
    return fronts[:-1]


def crowding_distance(F: np.ndarray) -> np.ndarray:
    n, m = F.shape
    d = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    finite = np.all(np.isfinite(F), axis=1)
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        fk = F[order, k]
        d[order[0]] = d[order[-1]] = np.inf
        lo, hi = fk[0], fk[-1]
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi == lo:
            continue
        d[order[1:-1]] += (fk[2:] - fk[:-2]) / (hi - lo)
    d[~finite] = 0.0
    return d


def _rank_and_crowd(F):
    fronts = non_dominated_sort(F)
    rank = np.empty(len(F), int)
    crowd = np.empty(len(F))
    for r, fr in enumerate(fronts):
        rank[fr] = r
        crowd[fr] = crowding_distance(F[fr])
    return rank, crowd, fronts


def _sbx(rng, p1, p2, lo, hi, eta, pc):
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > pc:
        return c1, c2
    for i in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        span = hi[i] - lo[i]
        u = rng.random()
        beta = 1.0 + 2.0 * (y1 - lo[i]) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        a = 0.5 * ((y1 + y2) - bq * (y2 - y1))
        beta = 1.0 + 2.0 * (hi[i] - y2) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        b = 0.5 * ((y1 + y2) + bq * (y2 - y1))
        a, b = min(max(a, lo[i]), hi[i]), min(max(b, lo[i]), hi[i])
        if rng.random() <= 0.5:
            a, b = b, a
        c1[i], c2[i] = a, b
        del span
    return c1, c2


def _poly_mutation(rng, x, lo, hi, eta, pm):
    y = x.copy()
    for i in range(len(x)):
        if rng.random() > pm:
            continue
        span = hi[i] - lo[i]
        if span <= 0:
            continue
        d1 = (y[i] - lo[i]) / span
        d2 = (hi[i] - y[i]) / span
        u = rng.random()
        mp = 1.0 / (eta + 1)
        if u < 0.5:
            val = 2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)
            dq = val ** mp - 1
        else:
            val = 2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)
            dq = 1 - val ** mp
        y[i] = min(max(y[i] + dq * span, lo[i]), hi[i])
    return y


def _tournament(rng, rank, crowd):
    a, b = rng.integers(0, len(rank), 2)
    if rank[a] != rank[b]:
        return a if rank[a] < rank[b] else b
    if crowd[a] != crowd[b]:
        return a if crowd[a] > crowd[b] else b
    return min(a, b)


def hypervolume_2d(F: np.ndarray, ref) -> float:
    """Area dominated by a set of bi-objective points and bounded by ``ref``."""
    P = np.asarray([f for f in F if np.all(np.isfinite(f)) and f[0] < ref[0] and f[1] < ref[1]])
    if not len(P):
        return 0.0
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    hv = 0.0
    best = ref[1]
    for x, y in P:
        if y < best:
            hv += (ref[0] - x) * (best - y)
            best = y
    return float(hv)


@dataclass
class GAResult:
    X: np.ndarray
    F: np.ndarray
    front: list
    history: list  # per generation: (X, F) of the surviving population


def nsga2(bounds, evaluate, config: GAConfig, on_generation=None) -> GAResult:
    """Run NSGA-II. ``evaluate(X, generation)`` returns an objective array (``inf`` marks failures)."""
    bounds = np.asarray(bounds, float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(~np.isfinite(bounds)) or np.any(lo > hi):
        raise CalibrationConfigError("bounds must be finite with lower <= upper")
    n = len(lo)
    pm = config.p_mutation if config.p_mutation is not None else 1.0 / n
    rng = np.random.default_rng(config.seed)
    N = config.population
    X = lo + rng.random((N, n)) * (hi - lo)
    F = np.asarray(evaluate(X, 0), float)
    if not np.any(np.all(np.isfinite(F), axis=1)):
        raise CalibrationConfigError("every individual of the initial population failed")
    rank, crowd, _ = _rank_and_crowd(F)
    history = [(X.copy(), F.copy())]
    if on_generation:
        on_generation(0, X, F)
    for gen in range(1, config.generations + 1):
        kids = []
        while len(kids) < N:
            p1 = X[_tournament(rng, rank, crowd)]
            p2 = X[_tournament(rng, rank, crowd)]
            c1, c2 = _sbx(rng, p1, p2, lo, hi, config.eta_c, config.p_crossover)
            kids.append(_poly_mutation(rng, c1, lo, hi, config.eta_m, pm))
            kids.append(_poly_mutation(rng, c2, lo, hi, config.eta_m, pm))
        Q = np.array(kids[:N])
        FQ = np.asarray(evaluate(Q, gen), float)
        RX = np.vstack([X, Q])
        RF = np.vstack([F, FQ])
        fronts = non_dominated_sort(RF)
        chosen = []
        for fr in fronts:
            if len(chosen) + len(fr) <= N:
                chosen += fr
            else:
                cd = crowding_distance(RF[fr])
                order = np.argsort(-cd, kind="stable")
                chosen += [fr[i] for i in order[:N - len(chosen)]]
                break
        chosen = np.array(chosen)
        X, F = RX[chosen], RF[chosen]
        rank, crowd, _ = _rank_and_crowd(F)
        history.append((X.copy(), F.copy()))
        if on_generation:
            on_generation(gen, X, F)
    fronts = non_dominated_sort(F)
    first = [i for i in fronts[0] if np.all(np.isfinite(F[i]))]
    # drop exact duplicates so the front is pairwise non-dominated and distinct
    seen, front = set(), []
    for i in first:
        key = tuple(np.round(F[i], 15))
        if key not in seen:
            seen.add(key)
            front.append(i)
    return GAResult(X=X, F=F, front=front, history=history)


# ---------------------------------------------------------------------------
# Pareto front and selection
# ---------------------------------------------------------------------------

@dataclass
class ParetoFront:
    names: list
    params: np.ndarray
    omega: np.ndarray
    trace_ids: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, float))
        self.omega = np.atleast_2d(np.asarray(self.omega, float))
        if not self.trace_ids:
            self.trace_ids = [""] * len(self.omega)

    def __len__(self):
        return len(self.omega)

    @property
    def omega_star(self) -> np.ndarray:
        if len(self) == 0:
            return self.omega.copy()
        lo = self.omega.min(axis=0)
        hi = self.omega.max(axis=0)
        rng = np.where(hi > lo, hi - lo, 1.0)
        return np.where(hi > lo, (self.omega - lo) / rng, 0.0)

    def is_non_dominated(self) -> bool:
        for i in range(len(self)):
            for j in range(len(self)):
                if i != j and dominates(self.omega[i], self.omega[j]):
                    return False
        return True

    def write_csv(self, path) -> None:
        k = self.omega.shape[1]
        ws = self.omega_star
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["solution_id"] + [f"ω{i + 1}" for i in range(k)] +
                       [f"ω{i + 1}_star" for i in range(k)] + list(self.names))
            for s in range(len(self)):
                w.writerow([s] + [repr(float(v)) for v in self.omega[s]] +
                           [repr(float(v)) for v in ws[s]] + [repr(float(v)) for v in self.params[s]])

    @classmethod
    def read_csv(cls, path) -> "ParetoFront":
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        head = rows[0]
        k = sum(1 for h in head if h.startswith("ω") and not h.endswith("_star"))
        names = head[1 + 2 * k:]
        data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(head))
        return cls(names=names, params=data[:, 1 + 2 * k:], omega=data[:, 1:1 + k])


@dataclass
class Selection:
    index: int
    omega_star_min: float
    neighbourhood: list
    ranges: dict


def normalize_and_select(front: ParetoFront, pick: int | None = None) -> Selection:
    """Minimum Euclidean norm of the range-normalised errors (ties: lowest index)."""
    if len(front) == 0:
        raise ValueError("empty Pareto front")
    ws = front.omega_star
    dist = np.sqrt(np.sum(ws ** 2, axis=1))
    best = int(np.argmin(dist))
    if pick is not None:
        if not 0 <= pick < len(front):
            raise ValueError(f"--pick {pick} outside the front (size {len(front)})")
        best = int(pick)
    dmin = float(dist[int(np.argmin(dist))])
    neigh = [int(i) for i in np.where(dist <= NEIGHBOURHOOD * dmin + 1e-15)[0]]
    if best not in neigh:
        neigh.append(best)
    ranges = {name: (float(front.params[neigh, j].min()), float(front.params[neigh, j].max()))
              for j, name in enumerate(front.names)}
    return Selection(index=best, omega_star_min=dmin, neighbourhood=sorted(neigh), ranges=ranges)


# ---------------------------------------------------------------------------
# calibration problems
# ---------------------------------------------------------------------------

CONTINUUM_UNKNOWNS = [("E", 1000.0, 6000.0), ("psi", 0.0, 56.0), ("ft", 0.01, 1.0),
                      ("Gt", 0.001, 0.5), ("fy_ratio", 0.01, 1.0), ("wc", 0.0, 1.0)]
HYBRID_EXTRA = [("k_star", 0.01, 1.5), ("c_star", 0.0, 2.0), ("Gs_M", 0.01, 0.25)]


@dataclass
class CalibrationProblem:
    kind: str  # "continuum", "hybrid" or "toy"
    unknowns: list  # [(name, lower, upper)]
    masonry: str = "weak"
    fixed: dict = field(default_factory=dict)
    objectives: list = field(default_factory=lambda: ["L4", "3L4"])
    ga: GAConfig = field(default_factory=GAConfig)
    reference: str = ""  # scenario preset or file for the mesoscale virtual test
    candidate: str = ""  # scenario preset or file for the macroscale model
    protocol_overrides: dict = field(default_factory=dict)
    per_partition_normaliser: bool = False
    grid_points: int = GRID_POINTS

    def __post_init__(self):
        if self.kind not in ("continuum", "hybrid", "toy"):
            raise CalibrationConfigError(f"unknown calibration kind {self.kind!r}")
        self.unknowns = [tuple(u) for u in self.unknowns]
        if isinstance(self.ga, dict):
            self.ga = GAConfig(**self.ga)
        names = [u[0] for u in self.unknowns]
        allowed = set(ContinuumParams.__dataclass_fields__) | {"k_star", "c_star", "Gs_M", "x"}
        for name, lo, hi in self.unknowns:
            if name not in allowed:
                raise CalibrationConfigError(f"unknown {name!r} does not name a material field")
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise CalibrationConfigError(f"bad bounds for {name}: [{lo}, {hi}]")
        if self.kind == "hybrid" and not {"k_star", "c_star"} <= set(names):
            raise CalibrationConfigError("hybrid calibration needs k_star and c_star unknowns")
        if not self.reference and self.kind != "toy":
            self.reference = f"vt-{self.masonry}-meso"
        if not self.candidate and self.kind != "toy":
            self.candidate = f"vt-{self.masonry}-{'hybrid' if self.kind == 'hybrid' else 'macro'}"

    @property
    def names(self) -> list:
        return [u[0] for u in self.unknowns]

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[u[1], u[2]] for u in self.unknowns], float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "unknowns": [list(u) for u in self.unknowns], "masonry": self.masonry,
                "fixed": self.fixed, "objectives": self.objectives, "ga": self.ga.__dict__,
                "reference": self.reference, "candidate": self.candidate,
                "protocol_overrides": self.protocol_overrides,
                "per_partition_normaliser": self.per_partition_normaliser,
                "grid_points": self.grid_points}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProblem":
        d = dict(d)
        allowed = set(cls.__dataclass_fields__)
        extra = set(d) - allowed
        if extra:
            raise CalibrationConfigError(f"unknown calibration fields: {sorted(extra)}")
        return cls(**d)

    def candidate_scenario(self, x) -> dict:
        """Scenario dictionary for parameter vector ``x``."""
        from .scenarios import JOINT, resolve
        from .interface import InterfaceParams as IP
        sc = resolve(self.candidate).model_dump(mode="json")
        sc["protocol"].update(self.protocol_overrides)
        vals = dict(self.fixed)
        vals.update(dict(zip(self.names, map(float, x))))
        mas = sc["materials"]["masonry"]
        for k, v in vals.items():
            if k in mas:
                mas[k] = v
        if self.kind == "hybrid":
            cont = ContinuumParams(**{k: v for k, v in mas.items() if k != "type"})
            ip = hybrid_parameter_expansion(vals, IP(**JOINT[self.masonry]), cont)
            sc["materials"]["ring_joint"] = {"type": "interface", **ip.to_dict()}
        return sc

    def selected_materials(self, x) -> dict:
        sc = self.candidate_scenario(x)
        return {k: v for k, v in sc["materials"].items() if k in ("masonry", "ring_joint")}


def toy_problem(seed: int = 0, population: int = 40, generations: int = 60) -> CalibrationProblem:
    return CalibrationProblem(kind="toy", unknowns=[("x", -5.0, 5.0)], objectives=["f1", "f2"],
                              ga=GAConfig(population=population, generations=generations, seed=seed))


def toy_objectives(x) -> np.ndarray:
    x = float(np.asarray(x).ravel()[0])
    return np.array([x ** 2, (x - 2.0) ** 2])


# ---------------------------------------------------------------------------
# evaluation, caching and orchestration
# ---------------------------------------------------------------------------

def cache_dir() -> Path:
    d = Path(os.environ.get("ARCHCAL_CACHE", Path.home() / ".cache" / "archcal"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0.0.0"


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def run_scenario_cached(scenario: dict, cache: Path | None = None):
    """Run a scenario dictionary, reusing a cached trace keyed by the scenario hash."""
    from .scenarios import parse_scenario, build
    from .solver import ResponseTrace, solve_quasi_static
    sc = parse_scenario(scenario)
    # the version is part of the key so traces from an older model are not reused
    key = _hash({"scenario": sc.model_dump(mode="json"), "version": _version()})
    cache = cache or cache_dir()
    path = cache / "traces" / f"{key}.json"
    if path.exists():
        d = json.loads(path.read_text())
        return ResponseTrace.from_dict(d["trace"]), key, d.get("label", "")
    mesh, mats, prot = build(sc)
    res = solve_quasi_static(mesh, mats, prot)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"trace": res.trace.to_dict(), "label": res.label,
                               "status": res.status}))
    tmp.replace(path)
    return res.trace, key, res.label


def reference_trace(problem: CalibrationProblem):
    from .scenarios import resolve
    sc = resolve(problem.reference).model_dump(mode="json")
    sc["protocol"].update(problem.protocol_overrides)
    return run_scenario_cached(sc)


def _evaluate_one(args):
    problem_dict, x, ref_dict, cache = args
    problem = CalibrationProblem.from_dict(problem_dict)
    if problem.kind == "toy":
        return toy_objectives(x).tolist(), "", "ok"
    from .solver import ResponseTrace, SolverError
    try:
        sc = problem.candidate_scenario(x)
        trace, key, _ = run_scenario_cached(sc, Path(cache))
    except (ValueError, SolverError) as exc:
        return [math.inf] * len(problem.objectives), "", f"failed: {exc}"
    ref = ResponseTrace.from_dict(ref_dict)
    try:
        om = objectives(trace, ref, problem.objectives, problem.grid_points,
                        problem.per_partition_normaliser)
    except (TraceAlignmentError, ValueError) as exc:
        return [math.inf] * len(problem.objectives), key, f"failed: {exc}"
    return om.tolist(), key, "ok"


def _xkey(x) -> str:
    return ",".join(repr(float(v)) for v in x)


class Ledger:
    """Append-only JSON-lines record of evaluated individuals, replayed on resume."""

    def __init__(self, path: Path | None):
        self.path = Path(path) if path else None
        self.known: dict = {}
        if self.path and self.path.exists():
            text = self.path.read_text()
            if text and not text.endswith("\n"):
                # torn final line after a kill: drop it so later appends stay well formed
                text = text[:text.rfind("\n") + 1]
                self.path.write_text(text)
            for line in text.splitlines():
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn final line after a kill
                self.known[_xkey(rec["x"])] = rec

    def write(self, rec: dict) -> None:
        self.known[_xkey(rec["x"])] = rec
        if self.path is None:
            return
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")


@dataclass
class CalibrationReport:
    front: ParetoFront
    selection: Selection
    result: GAResult
    out_dir: Path | None
    reference_key: str = ""


def run_calibration(problem: CalibrationProblem, out_dir=None, jobs: int = 1,
                    pick: int | None = None, plots: bool = True) -> CalibrationReport:
    """Run (or resume) a calibration; write the ledger, front, selection and plots to ``out_dir``."""
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    ledger = Ledger(out / "ledger.jsonl" if out else None)
    cache = str(cache_dir())
    if problem.kind == "toy":
        ref_dict, ref_key, ref = {}, "", None
    else:
        ref, ref_key, _ = reference_trace(problem)
        ref_dict = ref.to_dict()
    pdict = problem.to_dict()
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def evaluate(X, gen):
        results = [None] * len(X)
        todo = []
        for i, x in enumerate(X):
            rec = ledger.known.get(_xkey(x))
            if rec is not None:
                results[i] = rec
            else:
                todo.append(i)
        args = [(pdict, X[i].tolist(), ref_dict, cache) for i in todo]
        outs = list(pool.map(_evaluate_one, args)) if pool else [_evaluate_one(a) for a in args]
        for i, (om, key, status) in zip(todo, outs):
            rec = {"gen": gen, "x": X[i].tolist(), "omega": om, "trace": key, "status": status}
            ledger.write(rec)
            results[i] = rec
        F = np.array([[math.inf if v is None else v for v in r["omega"]] for r in results])
        failed = sum(1 for r in results if r["status"] != "ok")
        if failed > 0.5 * len(X):
            raise CalibrationAbort(f"{failed}/{len(X)} evaluations failed in generation {gen}")
        return F

    t0 = time.time()
    try:
        res = nsga2(problem.bounds, evaluate, problem.ga)
    finally:
        if pool:
            pool.shutdown()
    idx = res.front
    keys = [ledger.known[_xkey(res.X[i])]["trace"] for i in idx]
    front = ParetoFront(names=problem.names, params=res.X[idx], omega=res.F[idx], trace_ids=keys,
                        provenance={"ga": problem.ga.__dict__, "problem": pdict,
                                    "reference": ref_key, "wall_s": time.time() - t0})
    sel = normalize_and_select(front, pick)
    report = CalibrationReport(front=front, selection=sel, result=res, out_dir=out, reference_key=ref_key)
    if out:
        _write_outputs(problem, report, ref, plots)
    return report


def _write_outputs(problem, report: CalibrationReport, ref, plots: bool):
    out = report.out_dir
    front, sel = report.front, report.selection
    front.write_csv(out / "front.csv")
    x = front.params[sel.index]
    summary = {"selected_index": sel.index, "omega": front.omega[sel.index].tolist(),
               "omega_star_min": sel.omega_star_min, "neighbourhood": sel.neighbourhood,
               "parameters": dict(zip(front.names, x.tolist())),
               "neighbourhood_ranges": sel.ranges, "provenance": front.provenance}
    if problem.kind != "toy":
        (out / "selected_materials.json").write_text(
            json.dumps(problem.selected_materials(x), indent=2))
    (out / "report.json").write_text(json.dumps(summary, indent=2, default=float))
    lines = ["| parameter | lower | upper | neighbourhood min | neighbourhood max | selected |",
             "|---|---|---|---|---|---|"]
    for (name, lo, hi), v in zip(problem.unknowns, x):
        a, b = sel.ranges[name]
        lines.append(f"| {name} | {lo:g} | {hi:g} | {a:.4g} | {b:.4g} | {v:.4g} |")
    lines.append("")
    lines.append(f"minimum normalised error: {sel.omega_star_min:.4f} (solution {sel.index})")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    if plots:
        from . import plots as pl
        pl.front_scatter(front, sel.index, out / "front.svg")
        if ref is not None:
            from .solver import ResponseTrace
            curves = {}
            for i, key in enumerate(front.trace_ids):
                p = cache_dir() / "traces" / f"{key}.json"
                if key and p.exists():
                    curves[f"solution {i}"] = ResponseTrace.from_dict(json.loads(p.read_text())["trace"])
            for name in problem.objectives:
                pl.partition_overlay(ref, curves, name, out / f"overlay_{name}.svg",
                                     highlight=f"solution {sel.index}")


def calibration_preset(name: str) -> CalibrationProblem:
    """Packaged problems: ``toy`` and ``calib-{continuum,hybrid}-{weak,strong}``."""
    if name == "toy":
        return toy_problem()
    parts = name.split("-")
    if len(parts) != 3 or parts[0] != "calib" or parts[1] not in ("continuum", "hybrid") \
            or parts[2] not in ("weak", "strong"):
        raise KeyError(name)
    unknowns = list(CONTINUUM_UNKNOWNS) + (list(HYBRID_EXTRA) if parts[1] == "hybrid" else [])
    return CalibrationProblem(kind=parts[1], unknowns=unknowns, masonry=parts[2])


CALIBRATION_PRESETS = ["toy"] + [f"calib-{k}-{m}" for k in ("continuum", "hybrid")
                                 for m in ("weak", "strong")]


def load_problem(name_or_path) -> CalibrationProblem:
    """Preset name or JSON file holding a problem dictionary."""
    try:
        return calibration_preset(str(name_or_path))
    except KeyError:
        pass
    path = Path(name_or_path)
    if not path.exists():
        raise CalibrationConfigError(f"no calibration preset or file named {name_or_path!r}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return CalibrationProblem.from_dict(data)
    except TypeError as exc:
        raise CalibrationConfigError(str(exc)) from None
