"""Show how a learned Rectum limit moves the OAR/target trade-off curve.

Runs the default weighted-sum sweep on P1 with the original Rectum 20%
limit, then again with the improved one.

    python3 demos/pareto_shift.py
"""
import warnings

from inverse_rt import phantom
from inverse_rt.analysis import DEFAULT_SWEEP, pareto_sweep
from inverse_rt.improve import ImprovementTarget, improve_iteratively
from inverse_rt.rtp import solve_plan

warnings.simplefilter("ignore")

problem = phantom.generate(phantom.preset("p1"))
plan = solve_plan(problem)
oar = problem.find_objective("Rectum", "max_dvh", 0.2)
tgt = problem.find_objective("PTV", "min_dvh", 0.95)

res = improve_iteratively(problem, plan, ImprovementTarget("Rectum", 0.2, omega=0.5))
print(f"Rectum 20% limit {res.old_limit:.2f} -> {res.learned_limit:.2f} Gy\n")

before = pareto_sweep(problem, oar, tgt, DEFAULT_SWEEP)
after = pareto_sweep(res.problem, oar, tgt, DEFAULT_SWEEP)
print(f"{'weights':>10} {'OAR before':>11} {'OAR after':>10} {'PTV before':>11} {'PTV after':>10}")
for a, b in zip(before, after):
    w = f"{a.weights[0]:g}:{a.weights[1]:g}"
    print(f"{w:>10} {a.objective_values[0]:11.2f} {b.objective_values[0]:10.2f} "
          f"{a.objective_values[1]:11.2f} {b.objective_values[1]:10.2f}")
