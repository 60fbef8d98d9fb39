"""DVH curves, dose-at-volume metrics and weighted-sum Pareto sweeps."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .lp import TAU_OPT
from .rtp import Plan, PlanInfeasible, PlanProblem, cvar_value, lower_cvar_value, solve_plan, dv_value


@dataclass(frozen=True)
class DvhCurve:
    """Cumulative DVH: share of the volume receiving at least each dose."""

    structure: str
    points: Tuple[Tuple[float, float], ...]

    @property
    def doses(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def fractions(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def fraction_at(self, dose: float) -> float:
        """Share of voxels with dose >= ``dose``."""
        d = self.doses
        k = int(np.searchsorted(d, dose, side="left"))
        return 0.0 if k >= d.size else float(self.points[k][1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dose_gy", "fraction"])
        for d, f in self.points:
            w.writerow([f"{d:.6f}", f"{f:.6f}"])
        return buf.getvalue()


def dvh(doses, n_points: int = 101, structure: str = "") -> DvhCurve:
    """Empirical survivor function of ``doses``.

    Sampled on ``n_points`` evenly spaced levels from 0 to the maximum, with
    every distinct voxel dose added as an exact breakpoint.
    """
    d = np.sort(np.asarray(doses, float).ravel())
    if d.size == 0:
        raise ValueError("no doses given")
    if np.any(d < 0):
        raise ValueError("doses must be non-negative")
    levels = np.union1d(np.linspace(0.0, d[-1], max(int(n_points), 1)), d)
    levels = np.union1d(levels, [0.0])
    # number of voxels with dose >= level
    counts = d.size - np.searchsorted(d, levels, side="left")
    frac = counts / d.size
    return DvhCurve(structure, tuple(zip(levels.tolist(), frac.tolist())))


def dose_at_volume(curve: DvhCurve, fraction: float) -> float:
    """Largest dose level that at least ``fraction`` of the volume receives."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    f = curve.fractions
    ok = np.flatnonzero(f >= fraction - 1e-12)
    return float(curve.doses[ok[-1]]) if ok.size else 0.0


def dose_at_volume_sorted(doses, fraction: float) -> float:
    """Same metric straight from the doses: minimum of the ceil(f N) hottest."""
    d = np.sort(np.asarray(doses, float).ravel())[::-1]
    k = max(int(math.ceil(fraction * d.size - 1e-9)), 1)
    return float(d[k - 1])


# ---------------------------------------------------------------------------
# Pareto sweeps

DEFAULT_SWEEP = ((1.0, 1.0), (2.0, 1.0), (5.0, 1.0), (10.0, 1.0))


@dataclass(frozen=True)
class ParetoPoint:
    weights: Tuple[float, float]
    plan: Plan = field(repr=False)
    objective_values: Tuple[float, float]
    dominated: bool = False


def criterion_value(problem: PlanProblem, plan: Plan, index: int) -> float:
    ob = problem.objectives[index]
    return dv_value(ob, plan.doses_of(problem.structure(ob.structure)))


def pareto_sweep(problem: PlanProblem, oar_index: int, target_index: int,
                 weight_pairs: Sequence[Tuple[float, float]] = DEFAULT_SWEEP,
                 tie_break: float = 1e-4) -> List[ParetoPoint]:
    """Solve once per ``(w_oar, w_target)`` with the two rows softened.

    Each softened row keeps its limit but may be exceeded at a cost of the
    given weight per Gy.  Criterion values are evaluated directly from the
    doses (upper CVaR for the OAR row, lower CVaR for the target row), so
    smaller is better for the first and larger for the second.
    """
    pairs = [(float(a), float(b)) for a, b in weight_pairs]
    if not pairs:
        raise ValueError("at least one weight pair is required")
    for i in (oar_index, target_index):
        if not 0 <= i < len(problem.objectives) or not problem.objectives[i].is_dvh:
            raise ValueError(f"objective {i} is not a dose-volume objective")
    if problem.objectives[oar_index].kind != "max_dvh" or problem.objectives[target_index].kind != "min_dvh":
        raise ValueError("expected an upper OAR row and a lower target row")
    order = sorted(range(len(pairs)), key=lambda k: (pairs[k][0], pairs[k][1], k))
    raw = []
    for k in order:
        w_oar, w_t = pairs[k]
        try:
            plan = solve_plan(problem, soft={oar_index: w_oar, target_index: w_t}, tie_break=tie_break)
        except PlanInfeasible as exc:
            raise PlanInfeasible(f"sweep point (w_oar={w_oar:g}, w_target={w_t:g}): {exc}") from None
        vals = (criterion_value(problem, plan, oar_index), criterion_value(problem, plan, target_index))
        raw.append(((w_oar, w_t), plan, vals))
    out = []
    for i, (w, plan, (o, t)) in enumerate(raw):
        dom = any(
            (o2 <= o + TAU_OPT and t2 >= t - TAU_OPT) and (o2 < o - TAU_OPT or t2 > t + TAU_OPT)
            for j, (_, _, (o2, t2)) in enumerate(raw) if j != i
        )
        out.append(ParetoPoint(w, plan, (o, t), dom))
    return out


def pareto_csv(points: Sequence[ParetoPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["w_oar", "w_target", "oar_value", "target_value", "dominated"])
    for p in points:
        w.writerow([f"{p.weights[0]:g}", f"{p.weights[1]:g}", f"{p.objective_values[0]:.6f}",
                    f"{p.objective_values[1]:.6f}", int(p.dominated)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# plan-level metrics

METRICS = (("D_max", None), ("D_mean", None), ("D_95%", 0.95), ("D_70%", 0.70),
           ("D_30%", 0.30), ("D_5%", 0.05))


def structure_metrics(problem: PlanProblem, plan: Plan) -> List[Tuple[str, str, float]]:
    rows = []
    for s in problem.structures:
        d = plan.doses_of(s)
        for name, f in METRICS:
            if name == "D_max":
                v = float(d.max())
            elif name == "D_mean":
                v = float(d.mean())
            else:
                v = dose_at_volume_sorted(d, f)
            rows.append((s.name, name, v))
    return rows


def metrics_csv(problem: PlanProblem, plan: Plan) -> str:
    """One row per structure, one column per metric."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["structure"] + [m for m, _ in METRICS])
    rows = structure_metrics(problem, plan)
    k = len(METRICS)
    for i in range(0, len(rows), k):
        w.writerow([rows[i][0]] + [f"{v:.6f}" for _, _, v in rows[i:i + k]])
    return buf.getvalue()


def dvh_csv(problem: PlanProblem, plans: dict, n_points: int = 101) -> str:
    """Long-format DVH table: ``label, structure, dose_gy, fraction``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["plan", "structure", "dose_gy", "fraction"])
    for label, plan in plans.items():
        for s in problem.structures:
            c = dvh(plan.doses_of(s), n_points, s.name)
            for d, f in c.points:
                w.writerow([label, s.name, f"{d:.6f}", f"{f:.6f}"])
    return buf.getvalue()


__all__ = [
    "DvhCurve", "dvh", "dose_at_volume", "dose_at_volume_sorted", "ParetoPoint", "pareto_sweep",
    "pareto_csv", "structure_metrics", "metrics_csv", "dvh_csv", "DEFAULT_SWEEP",
    "cvar_value", "lower_cvar_value",
]
