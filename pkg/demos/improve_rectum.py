"""Walk through one limit-improvement run on the P1 prostate phantom.

Plans the phantom, tightens the Rectum 30% CVaR limit until the learned
value stops moving, and prints the before/after metrics.

    python3 demos/improve_rectum.py
"""
import warnings

from inverse_rt import phantom
from inverse_rt.analysis import dose_at_volume_sorted
from inverse_rt.improve import ImprovementTarget, compare_plans, improve_iteratively
from inverse_rt.rtp import cvar_value, solve_plan

warnings.simplefilter("ignore")

problem = phantom.generate(phantom.preset("p1"))
print(f"P1: {problem.n_voxels} voxels, {problem.n_beams} beamlets, {len(problem.objectives)} rows")

plan = solve_plan(problem)
rectum = problem.structure("Rectum")
print(f"initial Rectum CVaR(30%) = {cvar_value(plan.doses_of(rectum), 0.3):.2f} Gy")

target = ImprovementTarget("Rectum", 0.3, omega=0.5)
res = improve_iteratively(problem, plan, target)
print(f"history of learned limits: {', '.join(f'{h:.2f}' for h in res.history)}")
print(f"limit {res.old_limit:.2f} -> {res.learned_limit:.2f} Gy after {res.iterations} round(s), "
      f"dose distance {res.loss:.3f}")

ptv = problem.structure("PTV")
d95 = dose_at_volume_sorted(plan.doses_of(ptv), 0.95), dose_at_volume_sorted(res.new_plan.doses_of(ptv), 0.95)
print(f"PTV D95 {d95[0]:.2f} -> {d95[1]:.2f} Gy")

print("\nmetric changes:")
for m in compare_plans(plan, res.new_plan, problem):
    if m.structure in ("PTV", "Rectum", "Bladder"):
        print(f"  {m.structure:8s} {m.metric:6s} {m.render()}")
