"""Linear treatment-planning model with CVaR dose-volume rows.

Variables (minimisation):

    d      dose of every voxel that belongs to some structure
    u, o   under- and overdose of those voxels w.r.t. the structure prescription
    z, m   per-structure maximum and mean dose
    w      beam(let) intensities
    g, db  one CVaR threshold and one excess vector per dose-volume row
    h      soft-penalty slack, only for rows softened via ``soft=``

Dose-volume rows use the Rockafellar-Uryasev form.  For an upper row on
structure N at level ``alpha`` (``fraction``)::

    g + sum(db) / ((1 - alpha) |N|) <= U,   db >= d - g,   db >= 0

which bounds the mean dose of the hottest ``(1 - alpha)`` share of N.  Lower
rows mirror it on the cold tail.  ``fraction == 1`` degenerates to a pure
max (or min) dose bound.
"""
from __future__ import annotations

import json
import math
import os
import struct
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .lp import TAU_FEAS, TAU_OPT, LinearProgram, check_feasible, solve_lp

KINDS = ("max_dvh", "min_dvh", "max_dose", "min_dose", "uniform", "mean")
_TYPE_NAMES = {
    "max dvh": "max_dvh",
    "min dvh": "min_dvh",
    "max dose": "max_dose",
    "min dose": "min_dose",
    "uniform dose": "uniform",
    "uniform": "uniform",
    "mean dose": "mean",
    "mean": "mean",
}
_KIND_NAMES = {v: k.title().replace("Dvh", "DVH") for k, v in _TYPE_NAMES.items() if " " in k}


class RtpError(ValueError):
    """Malformed planning problem."""


class PlanInfeasible(RuntimeError):
    """The dose-volume limits admit no plan."""

    def __init__(self, message, culprit=None):
        super().__init__(message)
        self.culprit = culprit


@dataclass(frozen=True)
class Weights:
    underdose: float = 0.0
    overdose: float = 0.0
    max: float = 0.0
    mean: float = 0.0

    def __post_init__(self):
        if min(self.underdose, self.overdose, self.max, self.mean) < 0:
            raise RtpError("objective weights must be non-negative")


@dataclass(frozen=True)
class Structure:
    name: str
    kind: str
    voxels: np.ndarray
    prescribed_dose: float = 0.0
    weights: Weights = field(default_factory=Weights)

    def __post_init__(self):
        if self.kind not in ("target", "oar"):
            raise RtpError(f"{self.name}: kind must be 'target' or 'oar'")
        v = np.unique(np.asarray(self.voxels, dtype=np.int64).ravel())
        if v.size == 0:
            raise RtpError(f"{self.name}: structure has no voxels")
        if self.prescribed_dose < 0:
            raise RtpError(f"{self.name}: negative prescription")
        v.setflags(write=False)
        object.__setattr__(self, "voxels", v)

    @property
    def size(self) -> int:
        return int(self.voxels.size)


@dataclass(frozen=True)
class DvObjective:
    structure: str
    kind: str
    dose_limit: Optional[float]
    fraction: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RtpError(f"unknown objective kind {self.kind!r}")
        if not (0.0 < self.fraction <= 1.0):
            raise RtpError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.dose_limit is not None and self.dose_limit < 0:
            raise RtpError("dose limit must be non-negative")
        if self.weight < 0:
            raise RtpError("weight must be non-negative")
        if self.kind in ("max_dvh", "min_dvh", "max_dose", "min_dose", "uniform") and self.dose_limit is None:
            raise RtpError(f"{self.kind} objective needs a dose")

    @property
    def is_dvh(self) -> bool:
        return self.kind in ("max_dvh", "min_dvh")

    @property
    def label(self) -> str:
        pct = f" {100 * self.fraction:g}%" if self.is_dvh else ""
        return f"{_KIND_NAMES[self.kind]} {self.structure}{pct}"


@dataclass(frozen=True)
class PlanProblem:
    structures: tuple
    dose_influence: np.ndarray
    objectives: tuple = ()
    grid: Optional[tuple] = None

    def __post_init__(self):
        D = np.asarray(self.dose_influence, dtype=float)
        if D.ndim != 2:
            raise RtpError("dose-influence matrix must be 2-D")
        if not np.all(np.isfinite(D)) or np.any(D < 0):
            raise RtpError("dose-influence matrix must be finite and non-negative")
        D.setflags(write=False)
        structs = tuple(self.structures)
        names = [s.name for s in structs]
        if len(set(names)) != len(names):
            raise RtpError("structure names must be unique")
        if not any(s.kind == "target" for s in structs):
            raise RtpError("at least one target structure is required")
        seen = np.zeros(D.shape[0], dtype=bool)
        for s in structs:
            if s.voxels.max() >= D.shape[0] or s.voxels.min() < 0:
                raise RtpError(f"{s.name}: voxel index outside the dose-influence matrix")
            if seen[s.voxels].any():
                raise RtpError(f"{s.name}: overlaps another structure; resolve priorities first")
            seen[s.voxels] = True
        objs = tuple(self.objectives)
        for ob in objs:
            if ob.structure not in names:
                raise RtpError(f"objective refers to unknown structure {ob.structure!r}")
        object.__setattr__(self, "dose_influence", D)
        object.__setattr__(self, "structures", structs)
        object.__setattr__(self, "objectives", objs)

    @property
    def n_beams(self) -> int:
        return self.dose_influence.shape[1]

    @property
    def n_voxels(self) -> int:
        return self.dose_influence.shape[0]

    def structure(self, name: str) -> Structure:
        for s in self.structures:
            if s.name == name:
                return s
        raise RtpError(f"unknown structure {name!r}")

    def find_objective(self, structure: str, kind: str, fraction: Optional[float] = None) -> Optional[int]:
        for i, ob in enumerate(self.objectives):
            if ob.structure == structure and ob.kind == kind and (
                fraction is None or abs(ob.fraction - fraction) < 1e-12
            ):
                return i
        return None

    def with_objectives(self, objectives) -> "PlanProblem":
        return replace(self, objectives=tuple(objectives))

    def with_limit(self, index: int, dose_limit: float) -> "PlanProblem":
        objs = list(self.objectives)
        objs[index] = replace(objs[index], dose_limit=float(dose_limit))
        return self.with_objectives(objs)

    def scaled(self, s: float) -> "PlanProblem":
        """Dose-influence, prescriptions and limits all multiplied by ``s``."""
        structs = [replace(st, prescribed_dose=st.prescribed_dose * s) for st in self.structures]
        objs = [replace(o, dose_limit=None if o.dose_limit is None else o.dose_limit * s) for o in self.objectives]
        return PlanProblem(tuple(structs), self.dose_influence * s, tuple(objs), self.grid)


@dataclass(frozen=True)
class DvRow:
    """Where one dose-volume objective lives inside the built LP."""

    objective: int
    row: Optional[int]
    gamma: Optional[int]
    excess: Optional[slice]
    slack: Optional[int] = None


@dataclass
class RtpLayout:
    n_vars: int
    used_voxels: np.ndarray
    d: slice
    u: slice
    o: slice
    z: slice
    m: slice
    w: slice
    struct_pos: Dict[str, np.ndarray]
    struct_index: Dict[str, int]
    prescriptions: Dict[str, float]
    dv_rows: Dict[int, DvRow]
    warnings: List[str] = field(default_factory=list)

    def blocks(self) -> Dict[str, slice]:
        return {"d": self.d, "u": self.u, "o": self.o, "z": self.z, "m": self.m, "w": self.w}


@dataclass(frozen=True)
class Plan:
    beam_weights: np.ndarray
    voxel_doses: np.ndarray
    objective_value: float
    cvar_auxiliaries: dict = field(default_factory=dict, repr=False)

    def doses_of(self, structure: Structure) -> np.ndarray:
        return self.voxel_doses[structure.voxels]

    def to_dict(self) -> dict:
        return {
            "beam_weights": self.beam_weights.tolist(),
            "voxel_doses": self.voxel_doses.tolist(),
            "objective_value": float(self.objective_value),
            "cvar_auxiliaries": {
                str(k): {"gamma": float(g), "excess": np.asarray(e).tolist()}
                for k, (g, e) in sorted(self.cvar_auxiliaries.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        aux = {int(k): (v["gamma"], np.asarray(v["excess"])) for k, v in d.get("cvar_auxiliaries", {}).items()}
        return cls(np.asarray(d["beam_weights"], float), np.asarray(d["voxel_doses"], float),
                   float(d["objective_value"]), aux)


# ---------------------------------------------------------------------------
# CVaR

def cvar_value(doses, alpha: float) -> float:
    """Mean dose of the hottest ``(1 - alpha)`` share of the voxels.

    Equal to ``min_g g + sum(max(d - g, 0)) / ((1 - alpha) N)``; the tail
    share is fractional, so a voxel can count partially.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    d = np.sort(np.asarray(doses, dtype=float).ravel())[::-1]
    if d.size == 0:
        raise ValueError("no doses given")
    k = (1.0 - alpha) * d.size
    whole = int(math.floor(k + 1e-12))
    whole = min(whole, d.size)
    tail = d[:whole].sum()
    rest = k - whole
    if rest > 1e-12 and whole < d.size:
        tail += rest * d[whole]
    return float(tail / k)


def lower_cvar_value(doses, alpha: float) -> float:
    """Mean dose of the coldest ``(1 - alpha)`` share of the voxels."""
    return -cvar_value(-np.asarray(doses, dtype=float), alpha)


def _cvar_threshold(d, alpha):
    """An optimal ``g`` for the upper CVaR program (the ceil(k)-th largest dose)."""
    s = np.sort(d)[::-1]
    k = (1.0 - alpha) * s.size
    idx = min(max(int(math.ceil(k - 1e-12)) - 1, 0), s.size - 1)
    return float(s[idx])


def dv_value(ob: DvObjective, doses) -> float:
    """The quantity a dose-volume objective bounds, evaluated directly."""
    doses = np.asarray(doses, float)
    if ob.kind == "max_dvh":
        return float(doses.max()) if ob.fraction >= 1.0 else cvar_value(doses, ob.fraction)
    if ob.kind == "min_dvh":
        return float(doses.min()) if ob.fraction >= 1.0 else lower_cvar_value(doses, ob.fraction)
    if ob.kind == "max_dose":
        return float(doses.max())
    if ob.kind == "min_dose":
        return float(doses.min())
    return float(doses.mean())


# ---------------------------------------------------------------------------
# building the LP

class _Rows:
    def __init__(self):
        self.r, self.c, self.v = [], [], []
        self.b, self.rel = [], []

    def add(self, cols, vals, rel, rhs) -> int:
        i = len(self.b)
        cols = np.atleast_1d(cols)
        self.r.append(np.full(cols.size, i))
        self.c.append(cols)
        self.v.append(np.broadcast_to(np.asarray(vals, float), cols.shape))
        self.b.append(float(rhs))
        self.rel.append(rel)
        return i

    def add_block(self, cols, vals, rel, rhs) -> np.ndarray:
        """Rows given as a 2-D (rows x nnz) column/value pattern."""
        cols = np.asarray(cols)
        vals = np.broadcast_to(np.asarray(vals, float), cols.shape)
        rhs = np.broadcast_to(np.asarray(rhs, float), (cols.shape[0],))
        i0 = len(self.b)
        idx = np.arange(i0, i0 + cols.shape[0])
        self.r.append(np.repeat(idx, cols.shape[1]))
        self.c.append(cols.ravel())
        self.v.append(vals.ravel())
        self.b.extend(rhs.tolist())
        self.rel.extend([rel] * cols.shape[0])
        return idx

    def matrix(self, n):
        r = np.concatenate(self.r)
        c = np.concatenate(self.c)
        v = np.concatenate(self.v)
        return sp.csr_matrix((v, (r, c)), shape=(len(self.b), n))


def _effective_structure_terms(problem: PlanProblem):
    """Prescriptions and weights after folding in uniform/mean/max objectives."""
    pres = {s.name: s.prescribed_dose for s in problem.structures}
    w = {s.name: dict(under=s.weights.underdose, over=s.weights.overdose,
                      max=s.weights.max, mean=s.weights.mean) for s in problem.structures}
    for ob in problem.objectives:
        if ob.kind == "uniform":
            pres[ob.structure] = ob.dose_limit
            w[ob.structure]["under"] += ob.weight
            w[ob.structure]["over"] += ob.weight
        elif ob.kind == "mean":
            w[ob.structure]["mean"] += ob.weight
        elif ob.kind == "max_dose":
            w[ob.structure]["max"] += ob.weight
    return pres, w


def build_rtp(problem: PlanProblem, soft: Optional[Dict[int, float]] = None,
              tie_break: float = 0.0) -> Tuple[LinearProgram, RtpLayout]:
    """Assemble the planning LP and the map from objectives to rows/variables.

    ``soft`` maps objective indices (dose-volume rows only) to penalty
    weights: the row keeps its limit but gains a non-negative slack charged
    at that weight instead of being a hard constraint.  ``tie_break`` adds
    ``tie_break * value`` of each softened row to the objective so that
    ties between plans meeting the limit resolve towards the better value.
    """
    soft = dict(soft or {})
    D = problem.dose_influence
    used = np.unique(np.concatenate([s.voxels for s in problem.structures]))
    pos_of = np.full(problem.n_voxels, -1)
    pos_of[used] = np.arange(used.size)
    V, S, B = used.size, len(problem.structures), problem.n_beams

    n = 0

    def block(k):
        nonlocal n
        sl = slice(n, n + k)
        n += k
        return sl

    d_sl, u_sl, o_sl = block(V), block(V), block(V)
    z_sl, m_sl, w_sl = block(S), block(S), block(B)
    struct_pos = {s.name: pos_of[s.voxels] for s in problem.structures}
    struct_index = {s.name: i for i, s in enumerate(problem.structures)}
    pres, wts = _effective_structure_terms(problem)

    rows = _Rows()
    cost_entries = {}
    warn = []

    def charge(col, val):
        cost_entries[col] = cost_entries.get(col, 0.0) + val

    d0 = d_sl.start
    # dose-influence coupling: d_i - D_i w = 0
    Du = D[used]
    nzr, nzc = np.nonzero(Du)
    rows_start = len(rows.b)
    rows.r.append(np.concatenate([np.arange(V) + rows_start, rows_start + nzr]))
    rows.c.append(np.concatenate([d0 + np.arange(V), w_sl.start + nzc]))
    rows.v.append(np.concatenate([np.ones(V), -Du[nzr, nzc]]))
    rows.b.extend([0.0] * V)
    rows.rel.extend(["eq"] * V)

    for s in problem.structures:
        p = struct_pos[s.name]
        k = s.size
        P = pres[s.name]
        dcols = d0 + p
        ucols = u_sl.start + p
        ocols = o_sl.start + p
        # u >= P - d ; o >= d - P
        rows.add_block(np.stack([ucols, dcols], 1), [1.0, 1.0], "ge", P)
        rows.add_block(np.stack([ocols, dcols], 1), [1.0, -1.0], "ge", -P)
        rows.add_block(ucols[:, None], 1.0, "ge", 0.0)
        rows.add_block(ocols[:, None], 1.0, "ge", 0.0)
        zc = z_sl.start + struct_index[s.name]
        mc = m_sl.start + struct_index[s.name]
        rows.add_block(np.stack([np.full(k, zc), dcols], 1), [1.0, -1.0], "ge", 0.0)
        rows.add(np.concatenate([[mc], dcols]), np.concatenate([[1.0], np.full(k, -1.0 / k)]), "eq", 0.0)
        ww = wts[s.name]
        for c in ucols:
            charge(c, ww["under"] / k)
        for c in ocols:
            charge(c, ww["over"] / k)
        charge(zc, ww["max"])
        charge(mc, ww["mean"])

    # non-negativity of doses and intensities
    rows.add_block((d0 + np.arange(V))[:, None], 1.0, "ge", 0.0)
    rows.add_block((w_sl.start + np.arange(B))[:, None], 1.0, "ge", 0.0)

    dv_rows: Dict[int, DvRow] = {}
    for i, ob in enumerate(problem.objectives):
        s = problem.structure(ob.structure)
        p = struct_pos[s.name]
        dcols = d0 + p
        k = s.size
        if i in soft and not ob.is_dvh:
            raise RtpError("only dose-volume objectives can be softened")
        if ob.kind in ("uniform",):
            continue
        if ob.kind == "mean":
            if ob.dose_limit is None or ob.dose_limit <= 0:
                continue
            r = rows.add([m_sl.start + struct_index[s.name]], [1.0], "le", ob.dose_limit)
            dv_rows[i] = DvRow(i, r, None, None)
            continue
        upper = ob.kind in ("max_dvh", "max_dose")
        if ob.kind in ("max_dose", "min_dose") or ob.fraction >= 1.0:
            if ob.kind == "max_dvh":
                warn.append(f"{ob.label}: 100% volume row emitted as a max-dose bound")
            slack = block(1).start if i in soft else None
            if upper:
                zc = z_sl.start + struct_index[s.name]
                cols, vals = [zc], [1.0]
                if slack is not None:
                    cols, vals = [zc, slack], [1.0, -1.0]
                r = rows.add(cols, vals, "le", ob.dose_limit)
                if slack is not None:
                    charge(zc, tie_break)
            else:
                # per-voxel lower bounds; the single row reported is the first
                if slack is not None:
                    cc = np.stack([dcols, np.full(k, slack)], 1)
                    idx = rows.add_block(cc, [1.0, 1.0], "ge", ob.dose_limit)
                else:
                    idx = rows.add_block(dcols[:, None], 1.0, "ge", ob.dose_limit)
                r = int(idx[0])
            if slack is not None:
                rows.add([slack], [1.0], "ge", 0.0)
                charge(slack, soft[i])
            dv_rows[i] = DvRow(i, r, None, None, slack)
            continue
        g = block(1).start
        ex = block(k)
        ecols = np.arange(ex.start, ex.stop)
        coef = 1.0 / ((1.0 - ob.fraction) * k)
        sgn = 1.0 if upper else -1.0
        # upper: db >= d - g ; lower: db >= g - d
        rows.add_block(np.stack([ecols, dcols, np.full(k, g)], 1), [1.0, -sgn, sgn], "ge", 0.0)
        rows.add_block(ecols[:, None], 1.0, "ge", 0.0)
        cols = np.concatenate([[g], ecols])
        vals = np.concatenate([[1.0], np.full(k, sgn * coef)])
        slack = None
        if i in soft:
            slack = block(1).start
            cols = np.concatenate([cols, [slack]])
            vals = np.concatenate([vals, [-sgn]])
            rows.add([slack], [1.0], "ge", 0.0)
            charge(slack, soft[i])
            for c, v in zip(cols[:-1], vals[:-1]):
                charge(int(c), sgn * tie_break * v)
        r = rows.add(cols, vals, "le" if upper else "ge", ob.dose_limit)
        dv_rows[i] = DvRow(i, r, g, ex, slack)

    A = rows.matrix(n)
    cost = np.zeros(n)
    for c, v in cost_entries.items():
        cost[c] += v
    lp = LinearProgram(A, np.array(rows.b), tuple(rows.rel), cost, "min")
    layout = RtpLayout(n, used, d_sl, u_sl, o_sl, z_sl, m_sl, w_sl, struct_pos, struct_index,
                       pres, dv_rows, warn)
    for msg in warn:
        warnings.warn(msg, stacklevel=2)
    return lp, layout


# ---------------------------------------------------------------------------
# plans <-> LP vectors

def plan_vector(problem: PlanProblem, layout: RtpLayout, beam_weights) -> np.ndarray:
    """Full LP vector for the given intensities with every auxiliary set optimally."""
    w = np.maximum(np.asarray(beam_weights, float), 0.0)
    x = np.zeros(layout.n_vars)
    x[layout.w] = w
    dose = problem.dose_influence[layout.used_voxels] @ w
    x[layout.d] = dose
    for s in problem.structures:
        p = layout.struct_pos[s.name]
        ds = dose[p]
        P = layout.prescriptions[s.name]
        x[layout.u.start + p] = np.maximum(P - ds, 0.0)
        x[layout.o.start + p] = np.maximum(ds - P, 0.0)
        k = layout.struct_index[s.name]
        x[layout.z.start + k] = ds.max()
        x[layout.m.start + k] = ds.mean()
    for i, row in layout.dv_rows.items():
        ob = problem.objectives[i]
        ds = dose[layout.struct_pos[ob.structure]]
        val = dv_value(ob, ds)
        if row.gamma is not None:
            upper = ob.kind == "max_dvh"
            if upper:
                g = _cvar_threshold(ds, ob.fraction)
                ex = np.maximum(ds - g, 0.0)
            else:
                g = -_cvar_threshold(-ds, ob.fraction)
                ex = np.maximum(g - ds, 0.0)
            x[row.gamma] = g
            x[row.excess] = ex
        if row.slack is not None:
            lim = ob.dose_limit
            upper = ob.kind in ("max_dvh", "max_dose")
            x[row.slack] = max(val - lim, 0.0) if upper else max(lim - val, 0.0)
    return x


def _plan_from_vector(problem, layout, lp, x) -> Plan:
    w = np.maximum(x[layout.w], 0.0)
    full = plan_vector(problem, layout, w)
    aux = {}
    for i, row in layout.dv_rows.items():
        if row.gamma is not None:
            aux[i] = (float(full[row.gamma]), full[row.excess].copy())
    doses = problem.dose_influence @ w
    return Plan(w, doses, float(lp.cost @ full), aux)


def _identify_culprit(problem: PlanProblem):
    """First dose-volume objective whose addition makes the problem infeasible."""
    base = [ob for ob in problem.objectives if not _is_hard(ob)]
    active = list(base)
    for ob in problem.objectives:
        if not _is_hard(ob):
            continue
        active.append(ob)
        lp, _ = build_rtp(problem.with_objectives(active))
        if not solve_lp(lp).optimal:
            return ob
    return None


def _is_hard(ob: DvObjective) -> bool:
    return ob.kind in ("max_dvh", "min_dvh", "max_dose", "min_dose") or (
        ob.kind == "mean" and ob.dose_limit is not None and ob.dose_limit > 0)


def solve_plan(problem: PlanProblem, soft: Optional[Dict[int, float]] = None,
               tie_break: float = 0.0) -> Plan:
    lp, layout = build_rtp(problem, soft, tie_break)
    res = solve_lp(lp)
    if res.status == "infeasible":
        ob = _identify_culprit(problem) if not soft else None
        if ob is not None:
            raise PlanInfeasible(
                f"dose-volume limits infeasible at ({ob.structure}, alpha={ob.fraction:g}, "
                f"limit={ob.dose_limit:g})",
                (ob.structure, ob.fraction, ob.dose_limit),
            )
        raise PlanInfeasible("planning problem infeasible")
    if not res.optimal:
        raise RuntimeError(f"planning LP {res.status}")
    return _plan_from_vector(problem, layout, lp, res.x)


def plan_violations(problem: PlanProblem, plan: Plan, tol: float = TAU_FEAS, skip=()) -> list:
    """Hard dose-volume rows the plan breaks, as ``(index, label, excess)``."""
    out = []
    for i, ob in enumerate(problem.objectives):
        if i in skip or not _is_hard(ob):
            continue
        val = dv_value(ob, plan.doses_of(problem.structure(ob.structure)))
        excess = val - ob.dose_limit if ob.kind in ("max_dvh", "max_dose", "mean") else ob.dose_limit - val
        if excess > tol:
            out.append((i, ob.label, float(excess)))
    return out


# ---------------------------------------------------------------------------
# ingestion

def parse_objective_row(row: dict, dose_scale: float = 1.0) -> DvObjective:
    """One objective in the tabular clinical format.

    ``percentage`` is the volume level in percent; missing, ``None`` or
    ``"_"`` means 100.
    """
    try:
        typ = _TYPE_NAMES[str(row["objective_type"]).strip().lower()]
        name = row["roi_name"]
    except KeyError as exc:
        raise RtpError(f"objective row: bad or missing field {exc}") from None
    dose = row.get("dose")
    pct = row.get("percentage")
    frac = 1.0 if pct in (None, "_", "", "-") else float(pct) / 100.0
    return DvObjective(
        name, typ, None if dose is None else float(dose) * dose_scale, frac, float(row.get("weight", 1.0))
    )


def objective_row(ob: DvObjective, dose_scale: float = 1.0) -> dict:
    return {
        "objective_type": _KIND_NAMES[ob.kind],
        "roi_name": ob.structure,
        "dose": None if ob.dose_limit is None else ob.dose_limit / dose_scale,
        "weight": ob.weight,
        "percentage": 100.0 * ob.fraction if ob.is_dvh else None,
    }


_UNITS = {"Gy": 1.0, "cGy": 0.01}


def write_dose_influence(path, D) -> None:
    """Binary: two little-endian uint64 (n_voxels, n_beams) then float64 row-major."""
    D = np.ascontiguousarray(D, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *D.shape))
        fh.write(D.tobytes())


def read_dose_influence(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".csv"):
        return np.loadtxt(path, delimiter=",", ndmin=2)
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise RtpError("dose-influence file truncated")
        nv, nb = struct.unpack("<QQ", head)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nv * nb:
        raise RtpError(f"dose-influence file holds {data.size} values, header says {nv}x{nb}")
    return data.reshape(nv, nb).astype(float)


def problem_to_dict(problem: PlanProblem, dose_influence_file: Optional[str] = None) -> dict:
    out = {
        "dose_unit": "Gy",
        "n_voxels": problem.n_voxels,
        "n_beams": problem.n_beams,
        "structures": [
            {
                "name": s.name,
                "roi_type": "Target" if s.kind == "target" else "OAR",
                "voxels": s.voxels.tolist(),
                "prescribed_dose": s.prescribed_dose,
                "weights": {"underdose": s.weights.underdose, "overdose": s.weights.overdose,
                            "max": s.weights.max, "mean": s.weights.mean},
            }
            for s in problem.structures
        ],
        "objectives": [],
    }
    kinds = {s.name: s.kind for s in problem.structures}
    for ob in problem.objectives:
        r = objective_row(ob)
        r["roi_type"] = "Target" if kinds[ob.structure] == "target" else "OAR"
        out["objectives"].append(r)
    if problem.grid is not None:
        nx, ny, size = problem.grid
        out["grid"] = {"nx": nx, "ny": ny, "voxel_size": size}
    if dose_influence_file is None:
        out["dose_influence"] = problem.dose_influence.tolist()
    else:
        out["dose_influence"] = dose_influence_file
    return out


def problem_from_dict(data: dict, base_dir: str = ".") -> PlanProblem:
    try:
        scale = _UNITS[data.get("dose_unit", "Gy")]
    except KeyError:
        raise RtpError(f"unknown dose unit {data.get('dose_unit')!r}") from None
    dij = data.get("dose_influence")
    if dij is None:
        raise RtpError("missing field 'dose_influence'")
    if isinstance(dij, str):
        D = read_dose_influence(os.path.join(base_dir, dij))
    else:
        D = np.asarray(dij, dtype=float)
    for key, axis in (("n_voxels", 0), ("n_beams", 1)):
        if key in data and int(data[key]) != D.shape[axis]:
            raise RtpError(f"{key}={data[key]} disagrees with dose-influence shape {D.shape}")
    structs = []
    for k, s in enumerate(data.get("structures", [])):
        try:
            kind = s.get("kind") or ("target" if str(s["roi_type"]).lower() == "target" else "oar")
            wt = s.get("weights", {})
            structs.append(Structure(
                s["name"], kind, np.asarray(s["voxels"], dtype=np.int64),
                float(s.get("prescribed_dose", 0.0)) * scale,
                Weights(**{kk: float(v) for kk, v in wt.items()}),
            ))
        except KeyError as exc:
            raise RtpError(f"structure {k}: missing field {exc}") from None
        except TypeError as exc:
            raise RtpError(f"structure {k}: {exc}") from None
    objs = [parse_objective_row(r, scale) for r in data.get("objectives", [])]
    grid = data.get("grid")
    grid = None if grid is None else (int(grid["nx"]), int(grid["ny"]), float(grid["voxel_size"]))
    return PlanProblem(tuple(structs), D, tuple(objs), grid)


def load_problem(path) -> PlanProblem:
    with open(path) as fh:
        data = json.load(fh)
    return problem_from_dict(data, os.path.dirname(os.path.abspath(path)))
