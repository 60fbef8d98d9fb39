"""Learning better dose-volume limits for a treatment plan.

One dose-volume row (an upper CVaR bound on an OAR, or a lower bound on a
target) is made improvable.  The planning LP becomes the feasible set of a
single-constraint inverse problem whose observation is the current plan, and
the learned right-hand side is the new limit.  Distance to the observed plan
is measured on voxel doses only.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import inverse
from .analysis import METRICS, dose_at_volume_sorted
from .lp import TAU_FEAS
from .rtp import (
    DvObjective, Plan, PlanProblem, RtpError, _plan_from_vector, build_rtp, dv_value, plan_vector,
    plan_violations,
)

TIGHTEN = inverse.TIGHTEN
EXPAND = inverse.EXPAND


class ImprovementError(RuntimeError):
    """Improvement could not be carried out (bad target or infeasible bounds)."""


class ImprovementInfeasible(ImprovementError):
    """No plan meets the other constraints with the limit inside its bounds."""


class ConsistencyError(ImprovementError):
    """A guarantee that should hold by construction was observed to fail."""


@dataclass(frozen=True)
class ImprovementTarget:
    """The dose-volume row to improve.

    ``u_lower``/``u_upper`` bound the learned limit; ``None`` means "derive
    from the current limit" (``[0, U0]`` for upper rows when tightening).
    """

    structure: str
    fraction: float
    bound_kind: str = "upper"
    u_lower: Optional[float] = None
    u_upper: Optional[float] = None
    omega: float = 0.5
    direction: int = TIGHTEN
    norm: str = "l1"

    def __post_init__(self):
        if self.bound_kind not in ("upper", "lower"):
            raise ImprovementError("bound_kind must be 'upper' or 'lower'")
        if not (0.0 < self.fraction <= 1.0):
            raise ImprovementError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.bound_kind == "lower" and self.fraction >= 1.0:
            raise ImprovementError("a 100% lower row is a set of per-voxel bounds and cannot be learned")
        if not (0.0 <= self.omega <= 1.0):
            raise ImprovementError(f"omega must lie in [0, 1], got {self.omega}")
        if self.direction not in (TIGHTEN, EXPAND):
            raise ImprovementError("direction must be +1 (tighten) or -1 (expand)")
        if self.norm not in inverse.NORMS:
            raise ImprovementError(f"norm must be one of {inverse.NORMS}")
        for v in (self.u_lower, self.u_upper):
            if v is not None and not np.isfinite(v):
                raise ImprovementError("limit bounds must be finite")
        if self.u_lower is not None and self.u_upper is not None and self.u_lower > self.u_upper:
            raise ImprovementError("u_lower must not exceed u_upper")

    @property
    def objective_kind(self) -> str:
        return "max_dvh" if self.bound_kind == "upper" else "min_dvh"


@dataclass(frozen=True)
class ResidualVector:
    """Observed minus learned value, per variable block of the planning LP."""

    eps_d: np.ndarray
    eps_u: np.ndarray
    eps_o: np.ndarray
    eps_z: np.ndarray
    eps_m: np.ndarray
    eps_w: np.ndarray

    @classmethod
    def between(cls, layout, observed, learned) -> "ResidualVector":
        diff = np.asarray(observed, float) - np.asarray(learned, float)
        b = layout.blocks()
        return cls(*(diff[b[k]].copy() for k in ("d", "u", "o", "z", "m", "w")))

    def reconstructs(self, layout, observed, learned, tol: float = TAU_FEAS) -> bool:
        b = layout.blocks()
        for k in ("d", "u", "o", "z", "m", "w"):
            eps = getattr(self, "eps_" + k)
            if np.max(np.abs(np.asarray(learned)[b[k]] + eps - np.asarray(observed)[b[k]]), initial=0.0) > tol:
                return False
        return True


@dataclass(frozen=True)
class ImprovementResult:
    new_plan: Plan = field(repr=False)
    learned_limit: float
    old_limit: float
    loss: float
    iterations: int = 1
    converged: bool = True
    problem: Optional[PlanProblem] = field(default=None, repr=False)
    objective_index: int = -1
    history: tuple = ()
    margin: float = 0.0
    residuals: Optional[ResidualVector] = field(default=None, repr=False)
    solution: Optional[inverse.InverseSolution] = field(default=None, repr=False)
    bounds: tuple = ()

    def to_dict(self) -> dict:
        ob = self.problem.objectives[self.objective_index] if self.problem is not None else None
        return {
            "structure": None if ob is None else ob.structure,
            "kind": None if ob is None else ob.kind,
            "fraction": None if ob is None else ob.fraction,
            "objective_index": self.objective_index,
            "old_limit": self.old_limit,
            "learned_limit": self.learned_limit,
            "loss": self.loss,
            "iterations": self.iterations,
            "converged": self.converged,
            "history": list(self.history),
            "improvement_margin": self.margin,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _locate_row(problem: PlanProblem, target: ImprovementTarget, plan0: Plan):
    """Index of the targeted objective, adding it (at the plan's value) if absent."""
    try:
        st = problem.structure(target.structure)
    except RtpError as exc:
        raise ImprovementError(str(exc)) from None
    kind = target.objective_kind
    idx = problem.find_objective(target.structure, kind, target.fraction)
    if idx is None and target.fraction >= 1.0 and kind == "max_dvh":
        idx = problem.find_objective(target.structure, "max_dose")
    if idx is not None:
        return problem, idx
    probe = DvObjective(target.structure, kind, 0.0, target.fraction, 0.0)
    u0 = dv_value(probe, plan0.doses_of(st))
    ob = DvObjective(target.structure, kind, u0, target.fraction, 0.0)
    problem = problem.with_objectives(list(problem.objectives) + [ob])
    return problem, len(problem.objectives) - 1


def _limit_bounds(target: ImprovementTarget, u0: float):
    lo, hi = target.u_lower, target.u_upper
    tighten_up = (target.bound_kind == "upper") == (target.direction == TIGHTEN)
    if lo is None:
        lo = 0.0 if tighten_up else u0
    if hi is None:
        hi = u0 if tighten_up else max(2.0 * u0, u0 + 1.0)
    if not lo - TAU_FEAS <= u0 <= hi + TAU_FEAS:
        raise ImprovementError(f"current limit {u0:g} lies outside [{lo:g}, {hi:g}]")
    return float(min(lo, u0)), float(max(hi, u0))


def distance_weights(layout, norm: str) -> np.ndarray:
    """Per-variable distance weights: voxel doses only, averaged under L1."""
    w = np.zeros(layout.n_vars)
    n = layout.d.stop - layout.d.start
    w[layout.d] = 1.0 / n if norm == "l1" else 1.0
    return w


def dose_distance(problem: PlanProblem, a: Plan, b: Plan, norm: str = "l1") -> float:
    """The improvement distance between two plans (voxel doses in structures)."""
    used = np.unique(np.concatenate([s.voxels for s in problem.structures]))
    diff = np.abs(a.voxel_doses[used] - b.voxel_doses[used])
    return float(diff.mean() if norm == "l1" else diff.max())


def _lift_into_bounds(lp, layout, problem, idx, x0, lo, hi):
    """Move the observation's row value into ``[lo, hi]`` through its free auxiliary.

    The targeted row only bounds its auxiliaries from one side (``z >= d``,
    ``db >= d - g``), so raising ``z`` or ``g`` on an upper row, or lowering
    ``g`` on a lower row, describes the same plan.  Returns the adjusted
    vector and whether the row value now lies within the bounds.
    """
    dv = layout.dv_rows[idx]
    ob = problem.objectives[idx]
    upper = ob.kind in ("max_dvh", "max_dose")
    x0 = x0.copy()
    r = float(lp.row(dv.row) @ x0)
    if dv.gamma is not None:
        pad = dv.gamma
    elif upper:
        pad = layout.z.start + layout.struct_index[ob.structure]
    else:
        pad = None
    if pad is not None:
        if upper and r < lo:
            x0[pad] += lo - r
        elif not upper and r > hi:
            x0[pad] -= r - hi
        r = float(lp.row(dv.row) @ x0)
    tol = TAU_FEAS * (1 + abs(r))
    return x0, lo - tol <= r <= hi + tol


def improve_once(problem: PlanProblem, plan0: Plan, target: ImprovementTarget) -> ImprovementResult:
    """Learn one new limit for the targeted row and the matching plan."""
    problem, idx = _locate_row(problem, target, plan0)
    u0 = float(problem.objectives[idx].dose_limit)
    lo, hi = _limit_bounds(target, u0)
    bad = plan_violations(problem, plan0, skip=(idx,))
    if bad:
        i, label, excess = bad[0]
        raise ImprovementError(f"observed plan violates '{label}' by {excess:.3g} Gy")
    lp, layout = build_rtp(problem)
    row = layout.dv_rows[idx].row
    x0, inside = _lift_into_bounds(lp, layout, problem, idx,
                                   plan_vector(problem, layout, plan0.beam_weights), lo, hi)
    spec = inverse.ImprovementSpec((row,), [lo], [hi], target.omega, target.norm, [target.direction])
    weights = distance_weights(layout, target.norm)
    try:
        sol = inverse.solve_mil(lp, x0, row, spec, weights=weights)
    except inverse.InverseError as exc:
        raise ImprovementInfeasible(str(exc)) from None
    check = inverse.verify_improvement(sol, x0)
    # the guarantee needs the observation inside the learnable region; a plan
    # that breaks the targeted row beyond the bounds is improved without it
    if inside and not check.holds:
        raise ConsistencyError(f"improvement guarantee failed (margin {check.margin:.3g}): {check.reason}")
    learned = float(sol.b_hat[row])
    new_problem = problem.with_limit(idx, learned)
    new_plan = _plan_from_vector(new_problem, layout, lp, sol.x)
    resid = ResidualVector.between(layout, x0, sol.x)
    return ImprovementResult(
        new_plan, learned, u0, sol.loss, 1, True, new_problem, idx, (u0, learned), check.margin, resid, sol,
        (lo, hi),
    )


def improve_iteratively(problem: PlanProblem, plan0: Plan, target: ImprovementTarget,
                        eps_stop: float = 0.01, max_iters: int = 50) -> ImprovementResult:
    """Repeat :func:`improve_once`, feeding each plan back in as the observation.

    Stops when the limit moves by less than ``eps_stop``, when the plan is
    left unchanged, or when the limit reaches the end of its search
    interval (no further movement is possible).  Each round's
    search interval is capped by the previous learned limit, so the limits
    must move monotonically in the improving direction.
    """
    if max_iters < 1:
        raise ImprovementError("max_iters must be at least 1")
    res = improve_once(problem, plan0, target)
    history = [res.old_limit, res.learned_limit]
    tighten_up = (target.bound_kind == "upper") == (target.direction == TIGHTEN)
    sign = -1.0 if tighten_up else 1.0  # limits must move in this direction

    def settled(r, prev_limit):
        far = r.bounds[0] if tighten_up else r.bounds[1]
        # with omega = 0 the first round already returns the extreme attainable limit
        return (target.omega == 0.0 or abs(r.learned_limit - prev_limit) < eps_stop or r.loss <= TAU_FEAS
                or abs(r.learned_limit - far) <= TAU_FEAS * (1 + abs(far)))

    it, converged = 1, settled(res, res.old_limit)
    while not converged and it < max_iters:
        prev = res
        lim = prev.learned_limit
        nxt = ImprovementTarget(
            target.structure, target.fraction, target.bound_kind,
            target.u_lower if tighten_up else lim, lim if tighten_up else target.u_upper,
            target.omega, target.direction, target.norm,
        )
        res = improve_once(prev.problem, prev.new_plan, nxt)
        it += 1
        if sign * (res.learned_limit - lim) < -TAU_FEAS * (1 + abs(lim)):
            raise ConsistencyError(
                f"learned limit moved backwards at iteration {it}: {lim:g} -> {res.learned_limit:g}")
        history.append(res.learned_limit)
        converged = settled(res, lim)
    loss = dose_distance(problem, plan0, res.new_plan, target.norm)
    return ImprovementResult(
        res.new_plan, res.learned_limit, history[0], loss, it, converged, res.problem,
        res.objective_index, tuple(history), res.margin, res.residuals, res.solution, res.bounds,
    )


# ---------------------------------------------------------------------------
# before/after comparison

@dataclass(frozen=True)
class MetricDelta:
    structure: str
    metric: str
    before: float
    after: float

    @property
    def delta(self) -> float:
        return self.after - self.before

    @property
    def delta_pct(self) -> float:
        if self.before == 0.0:
            return 0.0 if self.after == 0.0 else float("inf")
        return 100.0 * self.delta / self.before

    def render(self) -> str:
        return f"{self.before:.2f} -> {self.after:.2f} ({self.delta_pct:+.1f}%)"


def compare_plans(before: Plan, after: Plan, problem: PlanProblem):
    out = []
    for s in problem.structures:
        a, b = before.doses_of(s), after.doses_of(s)
        for name, f in METRICS:
            if name == "D_max":
                va, vb = a.max(), b.max()
            elif name == "D_mean":
                va, vb = a.mean(), b.mean()
            else:
                va, vb = dose_at_volume_sorted(a, f), dose_at_volume_sorted(b, f)
            out.append(MetricDelta(s.name, name, float(va), float(vb)))
    return out


def comparison_csv(deltas) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["structure", "metric", "before_gy", "after_gy", "delta_gy", "delta_pct"])
    for m in deltas:
        w.writerow([m.structure, m.metric, f"{m.before:.6f}", f"{m.after:.6f}",
                    f"{m.delta:.6f}", f"{m.delta_pct:.2f}"])
    return buf.getvalue()
