"""Inverse learning models for linear programs.

Three models share one machinery:

* :func:`solve_il` learns a cost vector that makes a point near the
  observations optimal over a fixed feasible set.
* :func:`solve_mil` learns a new right-hand side for one constraint while
  staying close to an observed decision.
* :func:`solve_ilg` runs :func:`solve_mil` over every improvable constraint and
  keeps the best.

Everything is done in the canonical ``<=`` orientation of
:meth:`LinearProgram.canonical`.  A dual vector with a single unit entry
(``y = e_j``) turns the bilinear optimality conditions into plain LPs: the
binding row's normal becomes the cost and its right-hand side the optimum.

``direction`` is +1 to *tighten* a constraint (push its canonical rhs down)
and -1 to *expand* it.  The cost attached to a solution is
``-direction * G_j`` so that it always points from the observation towards the
learned boundary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .lp import TAU_FEAS, TAU_OPT, LinearProgram, LPError, check_feasible, solve_lp

NORMS = ("l1", "linf")
TIGHTEN = 1
EXPAND = -1


class InverseError(ValueError):
    """Raised when an inverse model has no feasible solution or bad input."""


@dataclass(frozen=True)
class ImprovementSpec:
    """Which constraints may move and how.

    ``b_lower``, ``b_upper`` and ``direction`` are aligned with ``improvable``
    and expressed in each row's *original* orientation (so for a ``>=`` row
    the bounds limit the ``>=`` right-hand side).
    """

    improvable: tuple
    b_lower: np.ndarray
    b_upper: np.ndarray
    omega: float = 0.5
    norm: str = "l1"
    direction: np.ndarray = None

    def __post_init__(self):
        idx = tuple(int(j) for j in np.atleast_1d(self.improvable))
        if not idx:
            raise InverseError("improvable set is empty")
        if len(set(idx)) != len(idx):
            raise InverseError("duplicate improvable index")
        lo = np.broadcast_to(np.asarray(self.b_lower, dtype=float), (len(idx),)).copy()
        hi = np.broadcast_to(np.asarray(self.b_upper, dtype=float), (len(idx),)).copy()
        if np.any(lo > hi):
            raise InverseError("b_lower must not exceed b_upper")
        if not (0.0 <= self.omega <= 1.0):
            raise InverseError(f"omega must lie in [0, 1], got {self.omega}")
        if self.norm not in NORMS:
            raise InverseError(f"norm must be one of {NORMS}, got {self.norm!r}")
        d = EXPAND if self.direction is None else self.direction
        d = np.broadcast_to(np.asarray(d, dtype=int), (len(idx),)).copy()
        if not np.all(np.isin(d, (TIGHTEN, EXPAND))):
            raise InverseError("direction entries must be +1 or -1")
        for a in (lo, hi, d):
            a.setflags(write=False)
        object.__setattr__(self, "improvable", idx)
        object.__setattr__(self, "b_lower", lo)
        object.__setattr__(self, "b_upper", hi)
        object.__setattr__(self, "direction", d)

    def position(self, j: int) -> int:
        try:
            return self.improvable.index(j)
        except ValueError:
            raise InverseError(f"constraint {j} is not improvable") from None

    def canonical_bounds(self, lp: LinearProgram, j: int):
        """Bounds on the canonical (``<=``-oriented) rhs of row ``j``."""
        k = self.position(j)
        if lp.rel[j] == "ge":
            return -self.b_upper[k], -self.b_lower[k]
        return self.b_lower[k], self.b_upper[k]

    def check_against(self, lp: LinearProgram):
        for k, j in enumerate(self.improvable):
            if not 0 <= j < lp.n_constraints:
                raise InverseError(f"improvable index {j} out of range")
            b0 = lp.b[j]
            if not (self.b_lower[k] - TAU_FEAS <= b0 <= self.b_upper[k] + TAU_FEAS):
                raise InverseError(
                    f"original rhs {b0:g} of constraint {j} outside "
                    f"[{self.b_lower[k]:g}, {self.b_upper[k]:g}]"
                )

    def restricted(self, subset: Sequence[int]) -> "ImprovementSpec":
        pos = [self.position(j) for j in subset]
        return ImprovementSpec(
            tuple(subset), self.b_lower[pos], self.b_upper[pos], self.omega, self.norm,
            self.direction[pos],
        )


@dataclass(frozen=True)
class InverseSolution:
    """A learned (cost, point, dual, rhs) tuple.

    ``dual`` is expressed on the canonical rows; ``dual_objective`` is the
    value ``cost'x`` must equal by strong duality for the learned rhs.
    ``b_hat`` maps improvable row index to its learned rhs in the row's
    original orientation.
    """

    cost: np.ndarray
    x: np.ndarray
    dual: np.ndarray
    b_hat: dict
    loss: float
    binding_index: int
    dual_objective: float
    direction: int = EXPAND
    objective: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "cost": self.cost.tolist(),
            "x": self.x.tolist(),
            "dual": self.dual.tolist(),
            "b_hat": {str(k): float(v) for k, v in sorted(self.b_hat.items())},
            "loss": float(self.loss),
            "binding_index": int(self.binding_index),
            "dual_objective": float(self.dual_objective),
            "direction": int(self.direction),
            "objective": float(self.objective),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InverseSolution":
        return cls(
            np.asarray(d["cost"], float),
            np.asarray(d["x"], float),
            np.asarray(d["dual"], float),
            {int(k): float(v) for k, v in d["b_hat"].items()},
            float(d["loss"]),
            int(d["binding_index"]),
            float(d.get("dual_objective", np.nan)),
            int(d.get("direction", EXPAND)),
            float(d.get("objective", np.nan)),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True)
class ImprovementCheck:
    holds: bool
    margin: float
    reason: str = ""

    def __bool__(self):
        return self.holds


# ---------------------------------------------------------------------------
# distance terms

def _distance_block(n, x0s, norm, weights):
    """Rows and objective for ``sum_i D(x, x0_i)`` on auxiliary variables.

    Returns ``(A_x, A_t, rhs, cost_t)`` for rows ``A_x x + A_t t <= rhs``.
    Coordinates with zero weight are left out of the distance entirely.
    """
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.size != n or np.any(w < 0):
        raise InverseError("distance weights must be non-negative, one per variable")
    idx = np.flatnonzero(w > 0)
    k = idx.size
    blocks_x, blocks_t, rhs, cost_t = [], [], [], []
    n_t = 0
    for x0 in x0s:
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != n:
            raise InverseError(f"observation has length {x0.size}, expected {n}")
        Wsel = sp.csr_matrix((w[idx], (np.arange(k), idx)), shape=(k, n))
        if norm == "l1":
            # w_i (x_i - x0_i) <= t_i  and  -w_i (x_i - x0_i) <= t_i
            T = -sp.identity(k, format="csr")
            blocks_x += [Wsel, -Wsel]
            blocks_t.append((n_t, sp.vstack([T, T])))
            rhs += [w[idx] * x0[idx], -w[idx] * x0[idx]]
            cost_t.append(np.ones(k))
            n_t += k
        else:
            T = -sp.csr_matrix(np.ones((k, 1)))
            blocks_x += [Wsel, -Wsel]
            blocks_t.append((n_t, sp.vstack([T, T])))
            rhs += [w[idx] * x0[idx], -w[idx] * x0[idx]]
            cost_t.append(np.ones(1))
            n_t += 1
    A_x = sp.vstack(blocks_x).tocsr()
    A_t = sp.lil_matrix((A_x.shape[0], n_t))
    r0 = 0
    for c0, T in blocks_t:
        A_t[r0:r0 + T.shape[0], c0:c0 + T.shape[1]] = T
        r0 += T.shape[0]
    return A_x, A_t.tocsr(), np.concatenate(rhs), np.concatenate(cost_t)


def distance(x, x0, norm="l1", weights=None) -> float:
    d = np.asarray(x, float) - np.asarray(x0, float)
    if weights is not None:
        d = d * np.asarray(weights, float)
    return float(np.sum(np.abs(d)) if norm == "l1" else (np.max(np.abs(d)) if d.size else 0.0))


# ---------------------------------------------------------------------------
# shared LP assembly

def _as_sparse(G):
    return G if sp.issparse(G) else sp.csr_matrix(G)


def _binding_subproblem(lp, x0s, j, *, rhs, row_rel, norm, weights, extra_var=None):
    """Assemble ``min D`` subject to the feasible set with row ``j`` binding.

    ``rhs`` / ``row_rel`` override the canonical rhs and relation per row.
    ``extra_var``, when given, is ``(lo, hi)`` for a learned rhs variable that
    replaces the fixed right-hand side of row ``j``.  Variable order is
    ``[x, t, (bh)]``.  Returns ``(A, b, rel, cost_D, n_t)``.
    """
    G, _, _, _ = lp.canonical()
    G = _as_sparse(G)
    n = lp.n_vars
    A_x, A_t, d_rhs, cost_t = _distance_block(n, x0s, norm, weights)
    n_t = A_t.shape[1]
    n_extra = 0 if extra_var is None else 1
    m = G.shape[0]
    zero_t = sp.csr_matrix((m, n_t))
    cols = [G, zero_t]
    b = np.array(rhs, dtype=float)
    rel = list(row_rel)
    if extra_var is not None:
        e = sp.csr_matrix(([-1.0], ([j], [0])), shape=(m, 1))
        cols.append(e)
        b[j] = 0.0
    rel[j] = "eq"
    top = sp.hstack(cols)
    dist_cols = [A_x, A_t]
    if n_extra:
        dist_cols.append(sp.csr_matrix((A_x.shape[0], 1)))
    rows = [top, sp.hstack(dist_cols)]
    b_all = [b, d_rhs]
    rel_all = rel + ["le"] * A_x.shape[0]
    if extra_var is not None:
        lo, hi = extra_var
        sel = sp.csr_matrix(([1.0], ([0], [n + n_t])), shape=(1, n + n_t + 1))
        rows += [sel, sel]
        b_all += [np.array([hi]), np.array([lo])]
        rel_all += ["le", "ge"]
    A = sp.vstack(rows).tocsr()
    cost_D = np.concatenate([np.zeros(n), cost_t, np.zeros(n_extra)])
    return A, np.concatenate(b_all), rel_all, cost_D, n_t


def _solve_min(A, b, rel, cost):
    prog = LinearProgram(A, b, tuple(rel), cost, "min")
    return prog, solve_lp(prog)


def _base_rows(lp: LinearProgram):
    _, h, eq_mask, _ = lp.canonical()
    rel = ["eq" if e else "le" for e in eq_mask]
    return h.copy(), rel


# ---------------------------------------------------------------------------
# IL

def solve_il(lp: LinearProgram, observations, norm: str = "l1", *, candidates=None,
             weights=None) -> InverseSolution:
    """Learn ``(c, x, y)`` with ``x`` optimal for ``c`` and closest to the data.

    Each candidate row ``j`` is tried as the sole dual support ``y = e_j``; the
    point is then the ``D``-projection of the observations onto the face
    ``{G_j x = h_j} ∩ Ω``.  The candidate with the smallest total loss wins,
    ties going to the lowest index.
    """
    if norm not in NORMS:
        raise InverseError(f"norm must be one of {NORMS}")
    obs = [np.asarray(o, float).ravel() for o in np.atleast_2d(np.asarray(observations, float))]
    if len(obs) == 0:
        raise InverseError("no observations given")
    G, h, eq_mask, _ = lp.canonical()
    h_base, rel_base = _base_rows(lp)
    cands = range(lp.n_constraints) if candidates is None else [int(j) for j in candidates]
    best = None
    any_feasible = False
    for j in cands:
        A, b, rel, cost, n_t = _binding_subproblem(
            lp, obs, j, rhs=h_base, row_rel=rel_base, norm=norm, weights=weights
        )
        _, res = _solve_min(A, b, rel, cost)
        if not res.optimal:
            continue
        any_feasible = True
        loss = res.objective
        if best is None or loss < best[0] - 1e-12 * (1 + abs(best[0])):
            best = (loss, j, res.x[: lp.n_vars])
    if not any_feasible:
        raise InverseError("feasible set is empty (every binding face infeasible)")
    loss, j, x = best
    y = np.zeros(lp.n_constraints)
    y[j] = 1.0
    cost = _row(G, j)
    loss = sum(distance(x, o, norm, weights) for o in obs)
    return InverseSolution(cost, x, y, {}, loss, j, float(h[j]), EXPAND, loss)


def il_projection_loss(lp: LinearProgram, observations, j, norm="l1", weights=None):
    """Loss of projecting the observations onto face ``j`` (None if empty)."""
    obs = [np.asarray(o, float).ravel() for o in np.atleast_2d(np.asarray(observations, float))]
    h_base, rel_base = _base_rows(lp)
    A, b, rel, cost, _ = _binding_subproblem(
        lp, obs, j, rhs=h_base, row_rel=rel_base, norm=norm, weights=weights
    )
    _, res = _solve_min(A, b, rel, cost)
    return res.objective if res.optimal else None


def _row(G, j):
    return G.getrow(j).toarray().ravel() if sp.issparse(G) else np.asarray(G[j], float).copy()


# ---------------------------------------------------------------------------
# MIL

def solve_mil(lp: LinearProgram, x0, j: int, spec: ImprovementSpec, *, weights=None,
              check_x0: bool = True) -> InverseSolution:
    """Learn a new right-hand side for row ``j`` close to the observation ``x0``.

    Minimises ``omega * D(x, x0) + (1 - omega) * direction * bh`` over points
    feasible for every other row, with row ``j`` binding at the learned
    canonical rhs ``bh`` inside its bounds.  Other improvable rows only need
    to respect their loosest allowed rhs.  Among minimisers the one closest
    to ``x0`` is returned.
    """
    spec.check_against(lp)
    k = spec.position(j)
    x0 = np.asarray(x0, float).ravel()
    if x0.size != lp.n_vars:
        raise InverseError(f"x0 has length {x0.size}, expected {lp.n_vars}")
    G, h, eq_mask, sign = lp.canonical()
    rhs, rel = _base_rows(lp)
    for i in spec.improvable:
        if i != j:
            rhs[i] = spec.canonical_bounds(lp, i)[1]
    if check_x0:
        _require_in_phi(lp, x0, j, rhs, rel, spec)
    lo, hi = spec.canonical_bounds(lp, j)
    A, b, rel_all, cost_D, n_t = _binding_subproblem(
        lp, [x0], j, rhs=rhs, row_rel=rel, norm=spec.norm, weights=weights, extra_var=(lo, hi)
    )
    nb = lp.n_vars + n_t
    direction = int(spec.direction[k])
    omega = spec.omega
    c_b = np.zeros(nb + 1)
    c_b[nb] = direction
    cost = omega * cost_D + (1.0 - omega) * c_b
    prog, res = _solve_min(A, b, rel_all, cost)
    if not res.optimal:
        raise InverseError(
            f"improvement problem for constraint {j} is {res.status}; "
            "bounds on the learned rhs may be too tight"
        )
    z = res.x
    f_star = res.objective
    # lexicographic second stage.  With omega = 1 the distance may not pin
    # down bh (zero distance weights leave directions free); take the most
    # improving bh among the closest points.  Otherwise take the closest
    # point among objective minimisers.
    pin_bh = sp.csr_matrix(([1.0], ([0], [nb])), shape=(1, nb + 1))
    if omega == 1.0:
        extra = sp.csr_matrix(cost_D.reshape(1, -1))
        A2 = sp.vstack([A, extra]).tocsr()
        _, res2 = _solve_min(A2, np.concatenate([b, [f_star]]), rel_all + ["le"], c_b)
        if res2.optimal:
            z = res2.x
        extra, extra_b, extra_rel = pin_bh, [z[nb]], ["eq"]
    elif omega == 0.0:
        extra, extra_b, extra_rel = pin_bh, [z[nb]], ["eq"]
    else:
        extra = sp.csr_matrix(cost.reshape(1, -1))
        extra_b, extra_rel = [f_star + 1e-10 * (1 + abs(f_star))], ["le"]
    A2 = sp.vstack([A, extra]).tocsr()
    _, res2 = _solve_min(A2, np.concatenate([b, extra_b]), rel_all + extra_rel, cost_D)
    if res2.optimal:
        z = res2.x
    x = z[: lp.n_vars]
    bh = float(z[nb])
    # snap solver noise onto an attained bound
    for bound in (lo, hi):
        if abs(bh - bound) <= 1e-9 * (1 + abs(bound)):
            bh = float(bound)
    return _mil_solution(lp, spec, j, x, bh, x0, weights)


def _require_in_phi(lp, x0, j, rhs, rel, spec):
    """``x0`` must satisfy every row other than ``j`` (with loosened improvables)."""
    G, _, _, _ = lp.canonical()
    act = np.asarray(G @ x0).ravel()
    mask = np.ones(lp.n_constraints, bool)
    mask[j] = False
    rel = np.array(rel)
    viol = np.where(rel == "eq", np.abs(act - rhs), act - rhs)
    viol = np.where(mask, viol, 0.0)
    scale = 1.0 + np.abs(rhs)
    bad = viol > TAU_FEAS * scale
    if bad.any():
        i = int(np.argmax(np.where(bad, viol, -np.inf)))
        raise InverseError(
            f"observation violates constraint {i} by {viol[i]:.3g}; "
            "it must be feasible for every non-improvable constraint"
        )


def _mil_solution(lp, spec, j, x, bh, x0, weights):
    G, h, _, sign = lp.canonical()
    direction = int(spec.direction[spec.position(j)])
    orient = -direction
    y = np.zeros(lp.n_constraints)
    y[j] = 1.0
    cost = orient * _row(G, j)
    act = np.asarray(G @ x).ravel()
    b_hat = {}
    for i in spec.improvable:
        if i == j:
            b_hat[i] = float(sign[i] * bh)
        else:
            lo_i, hi_i = spec.canonical_bounds(lp, i)
            val = min(max(max(h[i], act[i]), lo_i), hi_i)
            b_hat[i] = float(sign[i] * val)
    loss = distance(x, x0, spec.norm, weights)
    obj = spec.omega * loss + (1 - spec.omega) * direction * bh
    return InverseSolution(cost, x, y, b_hat, loss, j, orient * bh, direction, obj)


def solve_ilg(lp: LinearProgram, x0, spec: ImprovementSpec, *, weights=None,
              check_x0: bool = True) -> InverseSolution:
    """Best single-support improvement over all improvable rows.

    Exact when one row is improvable; a heuristic otherwise.  Candidates are
    compared on the weighted objective, then on the distance, then by index.
    """
    best = None
    errors = []
    for j in spec.improvable:
        try:
            sol = solve_mil(lp, x0, j, spec, weights=weights, check_x0=check_x0)
        except InverseError as exc:
            errors.append(f"{j}: {exc}")
            continue
        if best is None:
            best = sol
            continue
        tol = 1e-9 * (1 + abs(best.objective))
        if sol.objective < best.objective - tol or (
            abs(sol.objective - best.objective) <= tol and sol.loss < best.loss - 1e-12 * (1 + best.loss)
        ):
            best = sol
    if best is None:
        raise InverseError("every single-constraint subproblem failed: " + "; ".join(errors))
    return best


# ---------------------------------------------------------------------------
# certificates

def verify_improvement(sol: InverseSolution, x0, tol: float = TAU_OPT) -> ImprovementCheck:
    """Check ``cost'x >= cost'x0`` for a learned solution.

    The learned point must first lie on its binding hyperplane
    (``cost'x = dual_objective``); otherwise the check fails outright.
    """
    x0 = np.asarray(x0, float)
    cx = float(sol.cost @ sol.x)
    scale = 1.0 + abs(sol.dual_objective)
    if not np.isfinite(sol.dual_objective) or abs(cx - sol.dual_objective) > tol * scale:
        return ImprovementCheck(False, cx - float(sol.cost @ x0), "point is not on its binding constraint")
    margin = cx - float(sol.cost @ x0)
    return ImprovementCheck(margin >= -tol * (1 + abs(cx)), margin)


def solution_violations(lp: LinearProgram, sol: InverseSolution, spec: Optional[ImprovementSpec] = None,
                        tol: float = TAU_FEAS) -> list:
    """List the InverseSolution invariants that ``sol`` breaks (empty if none)."""
    out = []
    G, h, eq_mask, sign = lp.canonical()
    y = sol.dual
    support = list(range(lp.n_constraints)) if spec is None else list(spec.improvable)
    if np.any(y < -tol):
        out.append("dual has a negative entry")
    off = np.ones(lp.n_constraints, bool)
    off[support] = False
    if np.any(np.abs(y[off]) > tol):
        out.append("dual is non-zero outside the improvable set")
    if abs(y[support].sum() - 1.0) > tol:
        out.append("dual does not sum to one over the improvable set")
    orient = -sol.direction
    aty = orient * np.asarray(G.T @ y).ravel()
    if np.max(np.abs(aty - sol.cost)) > tol:
        out.append("cost differs from A'y")
    rhs = h.copy()
    for i, v in sol.b_hat.items():
        rhs[i] = sign[i] * v
    if abs(float(sol.cost @ sol.x) - orient * float(rhs @ y)) > TAU_OPT * (1 + abs(sol.dual_objective)):
        out.append("strong duality fails")
    act = np.asarray(G @ sol.x).ravel()
    viol = np.where(eq_mask, np.abs(act - rhs), act - rhs)
    if np.any(viol > tol * (1 + np.abs(rhs))):
        out.append(f"primal infeasible at row {int(np.argmax(viol))}")
    if spec is not None:
        for k, i in enumerate(spec.improvable):
            lo, hi = spec.b_lower[k], spec.b_upper[k]
            if i in sol.b_hat and not (lo - tol <= sol.b_hat[i] <= hi + tol):
                out.append(f"learned rhs for row {i} outside its bounds")
    return out


def ilg_violations(lp: LinearProgram, spec: ImprovementSpec, cost, x, y, b_hat: dict,
                   tol: float = TAU_FEAS) -> list:
    """Check a tuple against the generalized model's constraints.

    Uses the model's native orientation (``A'y = c`` on canonical rows, the
    duals of non-improvable rows fixed at zero).  ``b_hat`` maps every
    improvable index to a canonical rhs value.
    """
    G, h, eq_mask, _ = lp.canonical()
    cost, x, y = (np.asarray(v, float) for v in (cost, x, y))
    out = []
    rhs = h.copy()
    for k, i in enumerate(spec.improvable):
        if i not in b_hat:
            out.append(f"missing rhs for improvable row {i}")
            continue
        rhs[i] = b_hat[i]
        lo, hi = spec.canonical_bounds(lp, i)
        if not (lo - tol <= b_hat[i] <= hi + tol):
            out.append(f"rhs of row {i} outside bounds")
    act = np.asarray(G @ x).ravel()
    viol = np.where(eq_mask, np.abs(act - rhs), act - rhs)
    if np.any(viol > tol * (1 + np.abs(rhs))):
        out.append("primal feasibility")
    if np.max(np.abs(np.asarray(G.T @ y).ravel() - cost)) > tol:
        out.append("dual feasibility A'y = c")
    if abs(cost @ x - rhs @ y) > TAU_OPT * (1 + abs(rhs @ y)):
        out.append("strong duality")
    imp = list(spec.improvable)
    if abs(y[imp].sum() - 1.0) > tol:
        out.append("normalisation")
    if np.any(y[imp] < -tol):
        out.append("dual sign")
    off = np.ones(lp.n_constraints, bool)
    off[imp] = False
    if np.any(np.abs(y[off]) > tol):
        out.append("non-improvable dual non-zero")
    return out


def boundary_tuple(lp: LinearProgram, spec: ImprovementSpec, x, i: int):
    """The canonical feasible tuple for a point binding improvable row ``i``.

    Returns ``(cost, x, y, b_hat)`` with ``cost = G_i``, ``y = e_i`` and the
    original right-hand sides.
    """
    G, h, _, _ = lp.canonical()
    y = np.zeros(lp.n_constraints)
    y[i] = 1.0
    return _row(G, i), np.asarray(x, float), y, {k: float(h[k]) for k in spec.improvable}
