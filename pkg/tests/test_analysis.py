import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inverse_rt.analysis import (
    DEFAULT_SWEEP, dose_at_volume, dose_at_volume_sorted, dvh, dvh_csv, metrics_csv, pareto_csv,
    pareto_sweep, structure_metrics,
)
from inverse_rt.lp import TAU_OPT
from inverse_rt.rtp import DvObjective, PlanProblem, Structure, Weights, cvar_value, solve_plan
from oracles import dose_at_volume_oracle

pytestmark = pytest.mark.filterwarnings("ignore:.*100% volume")

DOSES = [10.0, 20.0, 30.0, 40.0]


def test_dvh_counts():
    c = dvh(DOSES)
    assert c.fraction_at(25.0) == 0.5
    assert c.fraction_at(0.0) == 1.0
    assert c.fraction_at(40.0) == 0.25
    assert c.fraction_at(40.1) == 0.0
    assert {10.0, 20.0, 30.0, 40.0} <= set(c.doses)


def test_dvh_constant_step():
    c = dvh([7.0, 7.0, 7.0], n_points=11)
    assert c.fraction_at(6.99) == 1.0 and c.fraction_at(7.0) == 1.0 and c.fraction_at(7.01) == 0.0


def test_dvh_single_zero():
    c = dvh([0.0])
    assert c.points == ((0.0, 1.0),)
    assert c.fraction_at(1e-9) == 0.0


def test_dvh_rejects():
    with pytest.raises(ValueError):
        dvh([])
    with pytest.raises(ValueError):
        dvh([1.0, -0.5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 80, allow_nan=False), min_size=1, max_size=40))
def test_dvh_shape(d):
    c = dvh(d, n_points=17)
    f = c.fractions
    assert c.doses[0] == 0.0 and f[0] == 1.0
    assert np.all(np.diff(c.doses) > 0) and np.all(np.diff(f) <= 0)
    assert np.all((f >= 0) & (f <= 1))


@pytest.mark.parametrize("f, v", [(0.5, 30.0), (1.0, 10.0), (1e-9, 40.0), (0.25, 40.0), (0.26, 30.0)])
def test_dose_at_volume_examples(f, v):
    assert dose_at_volume(dvh(DOSES), f) == v
    assert dose_at_volume_sorted(DOSES, f) == v


@pytest.mark.parametrize("f", [0.0, 1.2, -0.1])
def test_dose_at_volume_range(f):
    with pytest.raises(ValueError):
        dose_at_volume(dvh(DOSES), f)


@settings(max_examples=200, deadline=None)
@given(d=st.lists(st.floats(0, 80, allow_nan=False), min_size=1, max_size=40),
       f=st.sampled_from([0.05, 0.1, 0.3, 0.5, 0.7, 0.95, 1.0]) | st.floats(0.001, 1.0))
def test_dose_at_volume_matches_sorting(d, f):
    want = dose_at_volume_oracle(d, f)
    assert dose_at_volume(dvh(d), f) == want
    assert dose_at_volume_sorted(d, f) == want


@settings(max_examples=200, deadline=None)
@given(d=st.lists(st.floats(0, 80, allow_nan=False), min_size=1, max_size=40), a=st.floats(0.01, 0.99))
def test_cvar_bounds_quantile(d, a):
    assert cvar_value(d, a) >= dose_at_volume(dvh(d), 1 - a) - 1e-9


# --- metrics ------------------------------------------------------------------

def _trivial():
    t = Structure("T", "target", [0], 1.0, Weights(underdose=1.0, overdose=1.0))
    return PlanProblem((t,), np.array([[1.0]]))


def test_metrics_single_structure():
    prob = _trivial()
    plan = solve_plan(prob)
    lines = metrics_csv(prob, plan).splitlines()
    assert lines[0] == "structure,D_max,D_mean,D_95%,D_70%,D_30%,D_5%"
    assert len(lines) == 2 and lines[1].startswith("T,1.000000,1.000000")
    assert len(structure_metrics(prob, plan)) == 6


def test_dvh_csv_long_format():
    prob = _trivial()
    plan = solve_plan(prob)
    lines = dvh_csv(prob, {"plan": plan}, n_points=3).splitlines()
    assert lines[0] == "plan,structure,dose_gy,fraction"
    assert lines[1] == "plan,T,0.000000,1.000000"
    assert all(l.startswith("plan,T,") for l in lines[1:])


def test_curve_csv():
    assert dvh([1.0, 2.0], n_points=2).to_csv().splitlines()[0] == "dose_gy,fraction"


# --- Pareto -------------------------------------------------------------------

def _tradeoff():
    """The target needs 2 Gy on average; the cheaper beam also hits the OAR."""
    D = np.array([[1.0, 0.6], [1.0, 0.6], [0.8, 0.0], [0.5, 0.0]])
    T = Structure("T", "target", [0, 1], 2.0, Weights(overdose=1.0))
    O = Structure("O", "oar", [2, 3])
    obs = (DvObjective("O", "max_dvh", 0.5, 0.5), DvObjective("T", "min_dvh", 2.0, 0.5))
    return PlanProblem((T, O), D, obs)


def test_pareto_single_pair():
    pts = pareto_sweep(_tradeoff(), 0, 1, [(1.0, 0.0)])
    assert len(pts) == 1 and not pts[0].dominated
    # no target pressure: the OAR is spared completely
    assert pts[0].objective_values[0] == pytest.approx(0.0, abs=1e-8)
    assert len(pareto_csv(pts).splitlines()) == 2


def test_pareto_monotone_in_oar_weight():
    pts = pareto_sweep(_tradeoff(), 0, 1, [(10.0, 1.0), (1.0, 1.0)])
    assert [p.weights for p in pts] == [(1.0, 1.0), (10.0, 1.0)]
    assert pts[1].objective_values[0] <= pts[0].objective_values[0] + TAU_OPT


def test_pareto_on_p1(p1):
    oi = p1.find_objective("Rectum", "max_dvh", 0.2)
    ti = p1.find_objective("PTV", "min_dvh", 0.95)
    pts = pareto_sweep(p1, oi, ti, DEFAULT_SWEEP)
    oar = [p.objective_values[0] for p in pts]
    assert all(b <= a + TAU_OPT for a, b in zip(oar, oar[1:]))
    lines = pareto_csv(pts).splitlines()
    assert lines[0] == "w_oar,w_target,oar_value,target_value,dominated" and len(lines) == 5


def test_pareto_dominance_flag():
    pts = pareto_sweep(_tradeoff(), 0, 1, [(1.0, 1.0), (1.0, 1.0)])
    # identical points do not dominate each other
    assert not any(p.dominated for p in pts)


@pytest.mark.parametrize("args", [((0, 1), []), ((1, 0), [(1, 1)]), ((0, 5), [(1, 1)])])
def test_pareto_rejects(args):
    (oi, ti), pairs = args
    with pytest.raises(ValueError):
        pareto_sweep(_tradeoff(), oi, ti, pairs)
