"""Inverse LP on a two-variable toy: learn a tighter right-hand side.

The feasible set is x1 + x2 <= 2, x1 <= 1.5, x >= 0 and the observed
decision is (0.5, 1.0). Sweeping omega trades distance to the observation
against how far the limit moves.

    python3 demos/toy_inverse.py
"""
import numpy as np

from inverse_rt.inverse import TIGHTEN, ImprovementSpec, solve_il, solve_mil, verify_improvement
from inverse_rt.lp import LinearProgram

lp = LinearProgram(
    np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    np.array([2.0, 1.5, 0.0, 0.0]),
    ("le", "le", "ge", "ge"),
)
x0 = np.array([0.5, 1.0])

il = solve_il(lp, [x0], "l1")
print(f"nearest optimal point {il.x}, loss {il.loss:.3f}, binding row {il.binding_index}")

for omega in (0.0, 0.25, 0.5, 0.75, 1.0):
    spec = ImprovementSpec((0,), [1.0], [2.0], omega, "l1", [TIGHTEN])
    sol = solve_mil(lp, x0, 0, spec)
    ok = verify_improvement(sol, x0).holds
    print(f"omega={omega:4.2f}: b_hat={sol.b_hat[0]:.3f}, x={np.round(sol.x, 3) + 0.0}, loss={sol.loss:.3f}, "
          f"guarantee={'yes' if ok else 'no'}")
