"""Linear programs, a HiGHS-backed solving contract, and small-instance oracles.

All variables are free; bounds such as ``x >= 0`` are ordinary constraint rows.
That keeps the dual of every row explicit, which the inverse models rely on.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

TAU_FEAS = 1e-8
TAU_OPT = 1e-7

RELATIONS = ("le", "eq", "ge")
_REL_ALIASES = {"le": "le", "<=": "le", "eq": "eq", "=": "eq", "==": "eq", "ge": "ge", ">=": "ge"}

MAX_ENUM_VARS = 8
MAX_ENUM_ROWS = 16


class LPError(ValueError):
    """Malformed linear program or incompatible arguments."""


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``sense`` c'x subject to ``A x (rel) b`` row by row.

    ``A`` may be a dense array or any scipy sparse matrix; it is stored as CSR
    when sparse.  ``cost`` is optional so the same object can describe a bare
    feasible set for the inverse models.
    """

    A: object
    b: np.ndarray
    rel: tuple
    cost: Optional[np.ndarray] = None
    sense: str = "max"

    def __post_init__(self):
        A = self.A
        if sp.issparse(A):
            A = sp.csr_matrix(A, dtype=float)
            data = A.data
        else:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            data = A
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] == 0:
            raise LPError("constraint list is empty")
        if A.shape[0] != b.size:
            raise LPError(f"{A.shape[0]} rows but {b.size} right-hand sides")
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(b))):
            raise LPError("non-finite entry in constraint data")
        rel = self.rel
        if isinstance(rel, str):
            rel = (rel,) * b.size
        try:
            rel = tuple(_REL_ALIASES[r] for r in rel)
        except KeyError as exc:
            raise LPError(f"unknown relation {exc.args[0]!r}") from None
        if len(rel) != b.size:
            raise LPError("one relation per row required")
        cost = self.cost
        if cost is not None:
            cost = np.asarray(cost, dtype=float).ravel()
            if cost.size != A.shape[1]:
                raise LPError(f"cost has length {cost.size}, expected {A.shape[1]}")
            if not np.all(np.isfinite(cost)):
                raise LPError("non-finite cost entry")
            cost.setflags(write=False)
        if self.sense not in ("max", "min"):
            raise LPError(f"sense must be 'max' or 'min', got {self.sense!r}")
        if not sp.issparse(A):
            A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "rel", rel)
        object.__setattr__(self, "cost", cost)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.A)

    def dense(self) -> np.ndarray:
        return self.A.toarray() if self.is_sparse else np.asarray(self.A)

    def row(self, j: int) -> np.ndarray:
        if self.is_sparse:
            return self.A.getrow(j).toarray().ravel()
        return np.asarray(self.A[j])

    def activity(self, x) -> np.ndarray:
        return np.asarray(self.A @ np.asarray(x, dtype=float)).ravel()

    def with_cost(self, cost, sense: Optional[str] = None) -> "LinearProgram":
        return LinearProgram(self.A, self.b, self.rel, cost, sense or self.sense)

    def without_cost(self) -> "LinearProgram":
        return LinearProgram(self.A, self.b, self.rel, None, self.sense)

    def with_rhs(self, b) -> "LinearProgram":
        return LinearProgram(self.A, b, self.rel, self.cost, self.sense)

    def canonical(self):
        """Return ``(G, h, eq_mask, sign)`` with every inequality written as ``<=``.

        ``sign[j]`` is -1 for rows that were ``>=`` (negated) and +1 otherwise.
        Equality rows keep their orientation and are flagged in ``eq_mask``.
        """
        sign = np.array([-1.0 if r == "ge" else 1.0 for r in self.rel])
        eq_mask = np.array([r == "eq" for r in self.rel])
        if self.is_sparse:
            G = sp.diags(sign) @ self.A
            G = G.tocsr()
        else:
            G = sign[:, None] * np.asarray(self.A)
        return G, sign * self.b, eq_mask, sign

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        A = self.dense()
        return {
            "n_vars": int(self.n_vars),
            "constraints": [
                {"row": A[j].tolist(), "rel": self.rel[j], "rhs": float(self.b[j])}
                for j in range(self.n_constraints)
            ],
            "cost": None if self.cost is None else self.cost.tolist(),
            "sense": self.sense,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearProgram":
        try:
            n = int(data["n_vars"])
            cons = data["constraints"]
        except (KeyError, TypeError) as exc:
            raise LPError(f"missing field {exc}") from None
        if not cons:
            raise LPError("constraint list is empty")
        rows = []
        for k, c in enumerate(cons):
            row = list(c["row"])
            if len(row) != n:
                raise LPError(f"constraint {k}: row has length {len(row)}, expected {n}")
            rows.append(row)
        return cls(
            np.array(rows, dtype=float),
            [c["rhs"] for c in cons],
            tuple(c["rel"] for c in cons),
            data.get("cost"),
            data.get("sense", "max"),
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "LinearProgram":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LpSolution:
    x: Optional[np.ndarray]
    objective: float
    status: str
    dual: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    worst_index: int
    worst_violation: float

    def __bool__(self):
        return self.feasible


@dataclass(frozen=True)
class DualityCertificate:
    gap: float
    dual_feasible: bool
    residual: float


_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}
# the tight tolerances occasionally stall dual simplex on larger planning LPs
_HIGHS_ATTEMPTS = (("highs", {}), ("highs", {"presolve": False}), ("highs-ipm", {}))


def _split_rows(lp: LinearProgram):
    G, h, eq_mask, sign = lp.canonical()
    ub = np.flatnonzero(~eq_mask)
    eq = np.flatnonzero(eq_mask)
    return G, h, ub, eq, sign


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve ``lp`` with HiGHS.

    The returned dual follows the sensitivity convention ``y_j = dv/db_j`` of
    the problem's own sense, so ``A'y = c`` and ``b'y`` equals the optimum.
    """
    if lp.cost is None:
        raise LPError("solve_lp needs a cost vector")
    s = -1.0 if lp.sense == "max" else 1.0
    G, h, ub, eq, sign = _split_rows(lp)
    kwargs = {}
    if ub.size:
        kwargs["A_ub"], kwargs["b_ub"] = G[ub], h[ub]
    if eq.size:
        kwargs["A_eq"], kwargs["b_eq"] = G[eq], h[eq]
    for method, extra in _HIGHS_ATTEMPTS:
        res = linprog(
            s * lp.cost,
            bounds=[(None, None)] * lp.n_vars,
            method=method,
            options={**_HIGHS_OPTIONS, **extra},
            **kwargs,
        )
        if res.status != 4:  # 4: numerical difficulties, try the next configuration
            break
    if res.status == 2:
        return LpSolution(None, float("nan"), "infeasible")
    if res.status == 3:
        inf = float("inf") if lp.sense == "max" else float("-inf")
        return LpSolution(None, inf, "unbounded")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    # linprog reports d(min s*c'x)/d(b_ub); ub rows were multiplied by sign[j]
    y = np.zeros(lp.n_constraints)
    if ub.size:
        y[ub] = s * res.ineqlin.marginals * sign[ub]
    if eq.size:
        y[eq] = s * res.eqlin.marginals
    x = np.asarray(res.x, dtype=float)
    return LpSolution(x, float(lp.cost @ x), "optimal", y)


def check_feasible(lp: LinearProgram, x, tol: float = TAU_FEAS) -> FeasibilityReport:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != lp.n_vars:
        raise LPError(f"point has length {x.size}, expected {lp.n_vars}")
    ax = lp.activity(x)
    viol = np.zeros(lp.n_constraints)
    rel = np.array(lp.rel)
    le, ge, eq = rel == "le", rel == "ge", rel == "eq"
    viol[le] = ax[le] - lp.b[le]
    viol[ge] = lp.b[ge] - ax[ge]
    viol[eq] = np.abs(ax[eq] - lp.b[eq])
    viol = np.maximum(viol, 0.0)
    k = int(np.argmax(viol))
    return FeasibilityReport(bool(viol[k] <= tol), k, float(viol[k]))


def _dual_sign_ok(lp: LinearProgram, y, tol: float) -> bool:
    rel = np.array(lp.rel)
    # max: <= rows carry y >= 0, >= rows y <= 0; min flips both
    flip = 1.0 if lp.sense == "max" else -1.0
    ys = flip * np.asarray(y)
    return bool(np.all(ys[rel == "le"] >= -tol) and np.all(ys[rel == "ge"] <= tol))


def duality_certificate(lp: LinearProgram, x, y, tol: float = TAU_FEAS) -> DualityCertificate:
    if lp.cost is None:
        raise LPError("duality certificate needs a cost vector")
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != lp.n_vars or y.size != lp.n_constraints:
        raise LPError("dimension mismatch between LP and (x, y)")
    aty = np.asarray(lp.A.T @ y).ravel()
    resid = float(np.max(np.abs(aty - lp.cost))) if lp.n_vars else 0.0
    gap = abs(float(lp.cost @ x) - float(lp.b @ y))
    return DualityCertificate(gap, resid <= tol and _dual_sign_ok(lp, y, tol), resid)


def enumerate_vertices(lp: LinearProgram, tol: float = TAU_FEAS) -> np.ndarray:
    """Every basic feasible solution of ``lp`` by brute force.

    Tries all ``n``-subsets of rows as the active set; independent of the
    HiGHS path so it can serve as an oracle.  Returns an ``(k, n)`` array.
    """
    n, m = lp.n_vars, lp.n_constraints
    if n > MAX_ENUM_VARS or m > MAX_ENUM_ROWS:
        raise LPError(
            f"vertex enumeration is capped at {MAX_ENUM_VARS} variables and "
            f"{MAX_ENUM_ROWS} constraints (got {n}, {m})"
        )
    if n > m:
        return np.zeros((0, n))
    A = lp.dense()
    combos = np.array(list(itertools.combinations(range(m), n)))
    M = A[combos]
    rhs = lp.b[combos]
    det = np.linalg.det(M)
    ok = np.abs(det) > 1e-12
    if not ok.any():
        return np.zeros((0, n))
    pts = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    good = np.array([check_feasible(lp, p, tol).feasible for p in pts]) if len(pts) else np.zeros(0, bool)
    pts = pts[good]
    out = []
    for p in pts:
        if not any(np.max(np.abs(p - q)) <= max(tol, 1e-9) * (1 + np.max(np.abs(q))) * 10 for q in out):
            out.append(p)
    return np.array(out).reshape(-1, n)


def best_vertex_objective(lp: LinearProgram) -> Optional[float]:
    """Best objective over :func:`enumerate_vertices`, or None if there are none."""
    V = enumerate_vertices(lp)
    if len(V) == 0:
        return None
    vals = V @ lp.cost
    return float(vals.max() if lp.sense == "max" else vals.min())


def lp_from_rows(rows: Sequence[Sequence[float]], rel, rhs, cost=None, sense="max") -> LinearProgram:
    return LinearProgram(np.array(rows, dtype=float), rhs, rel, cost, sense)
