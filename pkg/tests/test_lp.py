import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inverse_rt.lp import (
    TAU_FEAS, TAU_OPT, LinearProgram, LPError, best_vertex_objective, check_feasible,
    duality_certificate, enumerate_vertices, lp_from_rows, solve_lp,
)
from oracles import glpk_lp, random_bounded_lp


def test_single_bound():
    lp = lp_from_rows([[1], [1]], ["le", "ge"], [1, 0], cost=[1])
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x == pytest.approx([1.0])
    assert sol.objective == pytest.approx(1.0)


def test_box_maximum(box_lp):
    sol = solve_lp(box_lp.with_cost([1, 1]))
    assert sol.x == pytest.approx([1, 1])
    assert sol.objective == pytest.approx(2)


def test_contradictory_bounds():
    lp = lp_from_rows([[1], [1]], ["ge", "le"], [2, 1], cost=[1])
    assert solve_lp(lp).status == "infeasible"


def test_unbounded():
    lp = lp_from_rows([[1]], ["ge"], [0], cost=[1])
    sol = solve_lp(lp)
    assert sol.status == "unbounded" and sol.objective == np.inf


def test_minimise_sense():
    lp = lp_from_rows([[1, 1], [1, 0], [0, 1]], ["ge", "ge", "ge"], [1, 0, 0], cost=[2, 3], sense="min")
    sol = solve_lp(lp)
    assert sol.objective == pytest.approx(2.0)
    cert = duality_certificate(lp, sol.x, sol.dual)
    assert cert.gap < TAU_OPT and cert.dual_feasible


@pytest.mark.parametrize(
    "x, ok, worst, viol",
    [((0.5, 0.5), True, None, 0.0), ((1.1, 0.0), False, 0, 0.1), ((1 + 1e-12, 0.0), True, None, None)],
)
def test_check_feasible(box_lp, x, ok, worst, viol):
    rep = check_feasible(box_lp, x, 1e-9)
    assert rep.feasible is ok
    if worst is not None:
        assert rep.worst_index == worst
    if viol is not None:
        assert rep.worst_violation == pytest.approx(viol)


def test_check_feasible_dimension(box_lp):
    with pytest.raises(LPError):
        check_feasible(box_lp, [1.0, 2.0, 3.0])


def test_duality_certificate_examples(box_lp):
    lp = box_lp.with_cost([1, 1])
    cert = duality_certificate(lp, [1, 1], [1, 1, 0, 0])
    assert cert.gap == 0 and cert.dual_feasible
    assert not duality_certificate(lp, [1, 1], [0, 0, 0, 0]).dual_feasible
    assert duality_certificate(lp, [0, 0], [1, 1, 0, 0]).gap == pytest.approx(2)


def test_duality_certificate_needs_cost(box_lp):
    with pytest.raises(LPError):
        duality_certificate(box_lp, [0, 0], [0, 0, 0, 0])


def test_wrong_sign_dual_rejected(box_lp):
    lp = box_lp.with_cost([1, 1])
    # A'y = c holds but the >= rows carry positive weight
    assert not duality_certificate(lp, [1, 1], [2, 2, 1, 1]).dual_feasible


def _as_set(V):
    return {tuple(np.round(v, 9) + 0.0) for v in V}


def test_vertices_box(box_lp):
    assert _as_set(enumerate_vertices(box_lp)) == {(0, 0), (1, 0), (0, 1), (1, 1)}


def test_vertices_simplex(simplex_lp):
    assert _as_set(enumerate_vertices(simplex_lp)) == {(0, 0), (1, 0), (0, 1)}


def test_vertices_infeasible():
    lp = lp_from_rows([[1], [1]], ["ge", "le"], [2, 1])
    assert len(enumerate_vertices(lp)) == 0


def test_vertex_cap():
    lp = LinearProgram(np.eye(9), np.ones(9), ("le",) * 9)
    with pytest.raises(LPError):
        enumerate_vertices(lp)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(A=[[1, 0]], b=[1, 2], rel=["le"]),
        dict(A=[[1, np.nan]], b=[1], rel=["le"]),
        dict(A=[[1, 0]], b=[1], rel=["lt"]),
        dict(A=np.zeros((0, 2)), b=[], rel=[]),
        dict(A=[[1, 0]], b=[1], rel=["le"], cost=[1, 2, 3]),
        dict(A=[[1, 0]], b=[1], rel=["le"], sense="maximise"),
    ],
)
def test_malformed_rejected(kwargs):
    with pytest.raises(LPError):
        LinearProgram(**kwargs)


def test_relation_aliases():
    lp = LinearProgram([[1.0]], [1.0], ["<="])
    assert lp.rel == ("le",)


def test_json_roundtrip_and_field_names(box_lp):
    lp = box_lp.with_cost([1, 2])
    d = json.loads(lp.to_json())
    assert set(d) == {"n_vars", "constraints", "cost", "sense"}
    assert set(d["constraints"][0]) == {"row", "rel", "rhs"}
    back = LinearProgram.from_json(lp.to_json())
    assert np.array_equal(back.dense(), lp.dense()) and back.rel == lp.rel
    assert np.array_equal(back.cost, lp.cost) and back.sense == lp.sense


def test_golden_json():
    lp = lp_from_rows([[1, 0]], ["le"], [1], cost=[1, 0])
    assert json.loads(lp.to_json()) == {
        "n_vars": 2,
        "constraints": [{"row": [1.0, 0.0], "rel": "le", "rhs": 1.0}],
        "cost": [1.0, 0.0],
        "sense": "max",
    }


def test_agrees_with_glpk():
    lp = lp_from_rows([[1, 2], [3, 1], [1, 0], [0, 1]], ["le", "le", "ge", "ge"], [4, 6, 0, 0], cost=[1, 1])
    G = np.vstack([lp.dense()[:2], -lp.dense()[2:]])
    h = np.concatenate([lp.b[:2], -lp.b[2:]])
    _, _, obj = glpk_lp(-lp.cost, G, h)
    assert solve_lp(lp).objective == pytest.approx(-obj, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 4), extra=st.integers(0, 6),
       sense=st.sampled_from(["max", "min"]))
def test_solver_matches_vertex_oracle(seed, n, extra, sense):
    rng = np.random.default_rng(seed)
    lp = random_bounded_lp(rng, n, n + 1 + extra, drop_redundant=False)
    lp = lp.with_cost(rng.normal(size=n), sense)
    sol = solve_lp(lp)
    assert sol.optimal
    best = best_vertex_objective(lp)
    assert abs(sol.objective - best) <= TAU_OPT * (1 + abs(best))
    assert check_feasible(lp, sol.x, TAU_FEAS).feasible
    cert = duality_certificate(lp, sol.x, sol.dual)
    assert cert.gap <= TAU_OPT * (1 + abs(sol.objective))
    assert cert.dual_feasible
