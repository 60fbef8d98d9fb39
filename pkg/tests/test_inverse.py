import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inverse_rt import inverse
from inverse_rt.inverse import (
    EXPAND, TIGHTEN, ImprovementSpec, InverseError, InverseSolution, boundary_tuple, ilg_violations,
    solution_violations, solve_il, solve_ilg, solve_mil, verify_improvement,
)
from inverse_rt.lp import duality_certificate, lp_from_rows
from oracles import canonical_dense, interior_sample, projection_oracle, random_bounded_lp


X0 = np.array([0.5, 0.8])


# --- IL --------------------------------------------------------------------

def test_il_box_projection(box_lp):
    sol = solve_il(box_lp, [X0])
    assert sol.x == pytest.approx([0.5, 1.0])
    assert sol.loss == pytest.approx(0.2)
    assert sol.binding_index == 1
    assert sol.cost == pytest.approx([0, 1])


def test_il_certificate_holds(box_lp):
    sol = solve_il(box_lp, [X0])
    cert = duality_certificate(box_lp.with_cost(sol.cost), sol.x, sol.dual)
    assert cert.gap < 1e-9 and cert.dual_feasible


def test_il_boundary_observation(box_lp):
    sol = solve_il(box_lp, [[1.0, 0.3]])
    assert sol.loss == pytest.approx(0.0, abs=1e-12)
    assert sol.x == pytest.approx([1.0, 0.3])


def test_il_simplex_full_candidate_set(simplex_lp):
    # the face x1 >= 0 is 0.2 away, which beats x1 + x2 = 1 at 0.6
    sol = solve_il(simplex_lp, [[0.2, 0.2]])
    assert sol.loss == pytest.approx(0.2)
    assert projection_oracle(simplex_lp, [0.2, 0.2])[0] == pytest.approx(0.2)


def test_il_simplex_restricted_to_sum_face(simplex_lp):
    sol = solve_il(simplex_lp, [[0.2, 0.2]], candidates=[0])
    assert sol.loss == pytest.approx(0.6)
    assert sol.x.sum() == pytest.approx(1.0)


def test_il_multiple_observations_sum(box_lp):
    obs = [[0.5, 0.8], [0.5, 0.9]]
    sol = solve_il(box_lp, obs)
    assert sol.loss == pytest.approx(0.3)


def test_il_linf(box_lp):
    sol = solve_il(box_lp, [X0], "linf")
    assert sol.loss == pytest.approx(0.2)


def test_il_errors(box_lp):
    with pytest.raises(InverseError):
        solve_il(box_lp, [])
    empty = lp_from_rows([[1], [1]], ["ge", "le"], [2, 1])
    with pytest.raises(InverseError):
        solve_il(empty, [[0.0]])


# --- MIL -------------------------------------------------------------------

def _spec(lo, hi, omega, direction, j=(0,)):
    return ImprovementSpec(j, lo, hi, omega, "l1", direction)


def test_mil_omega_one_keeps_observation(box_lp):
    sol = solve_mil(box_lp, X0, 0, _spec(0.0, 2.0, 1.0, EXPAND))
    assert sol.x == pytest.approx(X0)
    assert sol.b_hat[0] == pytest.approx(0.5)
    assert sol.loss == pytest.approx(0.0, abs=1e-12)


def test_mil_omega_zero_expands_to_bound(box_lp):
    sol = solve_mil(box_lp, X0, 0, _spec(0.0, 2.0, 0.0, EXPAND))
    assert sol.b_hat[0] == 2.0
    assert sol.x == pytest.approx([2.0, 0.8])
    assert verify_improvement(sol, X0).holds


def test_mil_tightening(box_lp):
    sol = solve_mil(box_lp, X0, 0, _spec(0.6, 1.0, 0.0, TIGHTEN))
    assert sol.b_hat[0] == 0.6
    assert sol.x == pytest.approx([0.6, 0.8])


def test_guarantee_needs_observation_inside_bounds(box_lp):
    # a'x0 = 0.5 lies below b_lower = 0.6, so x0 is outside the learnable
    # region and the learned point cannot beat it under the tightening cost
    out = solve_mil(box_lp, X0, 0, _spec(0.6, 1.0, 0.0, TIGHTEN))
    assert not verify_improvement(out, X0).holds
    inside = solve_mil(box_lp, X0, 0, _spec(0.3, 1.0, 0.0, TIGHTEN))
    assert inside.b_hat[0] == 0.3
    assert verify_improvement(inside, X0).holds


def test_mil_ge_row_orientation(box_lp):
    # improve x1 >= 0 (row 2) by tightening: its rhs rises to the upper bound
    spec = ImprovementSpec((2,), [0.0], [0.6], 0.0, "l1", [TIGHTEN])
    sol = solve_mil(box_lp, X0, 2, spec)
    assert sol.b_hat[2] == pytest.approx(0.6)
    assert sol.x[0] == pytest.approx(0.6)
    assert not solution_violations(box_lp, sol, spec)
    assert verify_improvement(sol, X0).holds


def test_mil_rejects_bad_observation(box_lp):
    with pytest.raises(InverseError):
        solve_mil(box_lp, [0.5, 1.5], 0, _spec(0.0, 2.0, 0.5, EXPAND))


def test_mil_infeasible_bounds():
    # x1 <= 1 is redundant behind x1 <= 0.8, so no rhs in [0.9, 1.2] can bind
    lp = lp_from_rows([[1, 0], [1, 0], [1, 0], [0, 1], [0, 1]], ["le", "le", "ge", "le", "ge"],
                      [1, 0.8, 0, 1, 0])
    spec = ImprovementSpec((0,), [0.9], [1.2], 0.5, "l1", [TIGHTEN])
    with pytest.raises(InverseError):
        solve_mil(lp, [0.5, 0.5], 0, spec)


def test_spec_validation():
    with pytest.raises(InverseError):
        ImprovementSpec((), [], [], 0.5)
    with pytest.raises(InverseError):
        ImprovementSpec((0,), [2.0], [1.0], 0.5)
    with pytest.raises(InverseError):
        ImprovementSpec((0,), [0.0], [1.0], 1.5)
    with pytest.raises(InverseError):
        ImprovementSpec((0,), [0.0], [1.0], 0.5, "l2")
    with pytest.raises(InverseError):
        ImprovementSpec((0,), [0.0], [1.0], 0.5, "l1", [0])


def test_spec_requires_original_rhs_in_bounds(box_lp):
    with pytest.raises(InverseError):
        solve_mil(box_lp, X0, 0, _spec(1.5, 2.0, 0.5, EXPAND))


# --- IL_g ------------------------------------------------------------------

def test_ilg_single_equals_mil(box_lp):
    spec = _spec(0.0, 2.0, 0.3, EXPAND)
    a, b = solve_ilg(box_lp, X0, spec), solve_mil(box_lp, X0, 0, spec)
    assert np.allclose(a.x, b.x) and a.b_hat == b.b_hat


def test_ilg_tie_goes_to_smaller_loss(box_lp):
    spec = ImprovementSpec((0, 1), [0.0, 0.0], [2.0, 2.0], 0.0, "l1", [EXPAND, EXPAND])
    sol = solve_ilg(box_lp, X0, spec)
    assert sol.binding_index == 1
    assert sol.x == pytest.approx([0.5, 2.0])
    assert sol.b_hat[1] == 2.0


def test_ilg_omega_one_free_bounds_keeps_observation(box_lp):
    spec = ImprovementSpec((0, 1), [0.0, 0.0], [2.0, 2.0], 1.0, "l1", [EXPAND, EXPAND])
    sol = solve_ilg(box_lp, X0, spec)
    assert sol.loss == pytest.approx(0.0, abs=1e-12)
    assert sol.x == pytest.approx(X0)


def test_ilg_pinned_bounds_match_restricted_il(box_lp):
    spec = ImprovementSpec((0, 1), [1.0, 1.0], [1.0, 1.0], 1.0, "l1", [EXPAND, EXPAND])
    sol = solve_ilg(box_lp, X0, spec)
    il = solve_il(box_lp, [X0], candidates=[0, 1])
    assert sol.loss == pytest.approx(il.loss, abs=1e-12)


def test_ilg_all_fail():
    # x <= 2 sits behind x <= 1, so no rhs in [2, 3] can be made binding
    lp = lp_from_rows([[1], [1], [1]], ["le", "le", "ge"], [1, 2, 0])
    spec = ImprovementSpec((1,), [2.0], [3.0], 0.5, "l1", [TIGHTEN])
    with pytest.raises(InverseError):
        solve_ilg(lp, [0.5], spec)


# --- verification ----------------------------------------------------------

def test_verify_identity_solution(box_lp):
    sol = solve_mil(box_lp, X0, 0, _spec(0.0, 2.0, 1.0, EXPAND))
    chk = verify_improvement(sol, X0)
    assert chk.holds and chk.margin == pytest.approx(0.0, abs=1e-12)


def test_verify_flags_point_off_its_hyperplane():
    sol = InverseSolution(np.array([-1.0, 0.0]), np.array([0.3, 0.8]), np.array([1.0, 0, 0, 0]),
                          {0: 0.6}, 0.0, 0, -0.6, TIGHTEN)
    chk = verify_improvement(sol, X0)
    assert not chk.holds and "binding" in chk.reason


def test_solution_serialisation(box_lp):
    sol = solve_mil(box_lp, X0, 0, _spec(0.6, 1.0, 0.0, TIGHTEN))
    d = json.loads(sol.to_json())
    assert {"cost", "x", "dual", "b_hat", "loss", "binding_index"} <= set(d)
    back = InverseSolution.from_dict(d)
    assert np.array_equal(back.x, sol.x) and back.b_hat == sol.b_hat


def test_solution_invariants(box_lp):
    spec = ImprovementSpec((0, 1), [0.0, 0.0], [2.0, 2.0], 0.4, "l1", [EXPAND, TIGHTEN])
    sol = solve_ilg(box_lp, X0, spec)
    assert solution_violations(box_lp, sol, spec) == []
    assert sol.dual[list(spec.improvable)].sum() == pytest.approx(1.0)


# --- properties ------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 4), extra=st.integers(0, 5),
       omega=st.floats(0, 1), tighten=st.booleans(), norm=st.sampled_from(["l1", "linf"]))
def test_mil_improvement_property(seed, n, extra, omega, tighten, norm):
    rng = np.random.default_rng(seed)
    lp = random_bounded_lp(rng, n, n + 1 + extra)
    x0 = interior_sample(rng, lp)
    j = int(rng.integers(lp.n_constraints))
    G, h, _ = canonical_dense(lp)
    act = float(G[j] @ x0)
    b0 = lp.b[j]
    lo_c, hi_c = act - rng.uniform(0, 1), h[j] + rng.uniform(0, 1)
    lo, hi = (-hi_c, -lo_c) if lp.rel[j] == "ge" else (lo_c, hi_c)
    spec = ImprovementSpec((j,), [lo], [hi], omega, norm, [TIGHTEN if tighten else EXPAND])
    assert lo <= b0 <= hi
    sol = solve_mil(lp, x0, j, spec)
    assert verify_improvement(sol, x0).holds
    assert solution_violations(lp, sol, spec) == []


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 4), extra=st.integers(1, 5))
def test_loss_monotone_in_improvable_set(seed, n, extra):
    rng = np.random.default_rng(seed)
    lp = random_bounded_lp(rng, n, n + 1 + extra)
    m = lp.n_constraints
    G, h, _ = canonical_dense(lp)
    big = sorted(rng.choice(m, size=max(2, m // 2), replace=False).tolist())
    small = big[: max(1, len(big) // 2)]
    lo_c = h - 1.0
    hi_c = h + 1.0
    spec_big = ImprovementSpec(tuple(big), [_orig(lp, i, lo_c, hi_c)[0] for i in big],
                               [_orig(lp, i, lo_c, hi_c)[1] for i in big], 0.5)
    spec_small = spec_big.restricted(small)
    x0 = interior_sample(rng, lp)
    sol = solve_mil(lp, x0, small[0], spec_small)
    sign = lp.canonical()[3]
    bh = {i: sign[i] * sol.b_hat[i] for i in small}
    y = sol.dual
    # feasible for the small model in its native orientation ...
    assert ilg_violations(lp, spec_small, G[small[0]], sol.x, y, bh) == []
    # ... hence feasible for the large one once the extra rhs stay at b0
    bh_big = dict(bh)
    bh_big.update({i: h[i] for i in big if i not in bh})
    assert ilg_violations(lp, spec_big, G[small[0]], sol.x, y, bh_big) == []


def _orig(lp, i, lo_c, hi_c):
    return (-hi_c[i], -lo_c[i]) if lp.rel[i] == "ge" else (lo_c[i], hi_c[i])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 4), extra=st.integers(0, 5))
def test_boundary_points_are_feasible_tuples(seed, n, extra):
    rng = np.random.default_rng(seed)
    lp = random_bounded_lp(rng, n, n + 1 + extra)
    G, h, _ = canonical_dense(lp)
    x = interior_sample(rng, lp, boundary_share=1.0)
    i = int(np.argmax(G @ x - h))
    assert abs(G[i] @ x - h[i]) < 1e-9
    spec = ImprovementSpec((i,), [min(lp.b[i], lp.b[i])], [lp.b[i]], 0.5)
    cost, xx, y, bh = boundary_tuple(lp, spec, x, i)
    assert ilg_violations(lp, spec, cost, xx, y, bh) == []


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 3), extra=st.integers(0, 5),
       norm=st.sampled_from(["l1", "linf"]))
def test_il_matches_projection_oracle(seed, n, extra, norm):
    rng = np.random.default_rng(seed)
    lp = random_bounded_lp(rng, n, n + 1 + extra)
    x0 = interior_sample(rng, lp)
    sol = solve_il(lp, [x0], norm)
    ref, _ = projection_oracle(lp, x0, norm)
    assert abs(sol.loss - ref) <= 1e-7 * (1 + ref)


def test_dual_zero_outside_improvable(box_lp):
    spec = ImprovementSpec((0, 1), [0.0, 0.0], [2.0, 2.0], 0.5, "l1", [EXPAND, EXPAND])
    sol = solve_ilg(box_lp, X0, spec)
    assert np.all(sol.dual[[2, 3]] == 0)
    assert inverse.distance(sol.x, X0) == pytest.approx(sol.loss)
