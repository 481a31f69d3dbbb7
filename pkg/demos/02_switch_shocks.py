"""Two regimes, two stocks, Poisson jumps and price shocks at regime switches.

Regime 1 is calm and bullish; regime 2 is volatile and the first stock has a
negative excess drift there.  Leaving regime 1 knocks both prices down,
leaving regime 2 lifts them.  We compare the unconstrained investor with one
who may not short, and look at where the constraint actually bites.
"""

import numpy as np

from regime_mv import benchmarks, check_feasibility, frontier, solve, solve_constrained
from regime_mv.policy_frontier import (FrontierQuery, feedback_noshort, feedback_unconstrained,
                                       lambda_star, min_noshort_mean)

model = benchmarks.shock_model()
for mode in ("unconstrained", "noshort"):
    ok, diag = check_feasibility(model, mode, 0)
    print(f"{mode:>13}: feasible={ok} (diagnostic {diag:.4f})")

free = solve(model)
tied = solve_constrained(model)

# P for the free investor, P+ / P- for the constrained one.  Without the
# constraint P+ and P- would both equal P; the gap measures the constraint.
print("\nat t = 0      P        P+       P-")
for i in range(2):
    print(f"regime {i + 1}  {free.P[0, i]:.5f}  {tied.P_plus[0, i]:.5f}  {tied.P_minus[0, i]:.5f}")

# The cheapest no-short target is the bank account; below it nothing is attainable.
x = 1.0
z0 = min_noshort_mean(model, x)
print(f"\nriskless terminal wealth: {z0:.5f}")

zs = np.linspace(z0, 2.0, 6)
print("\n target   std (free)  std (no short)")
for a, b in zip(frontier(free, model, x, 0, "unconstrained", zs),
                frontier(tied, model, x, 0, "noshort", zs)):
    print(f"{a.mean:7.3f}  {a.std:10.5f}  {b.std:13.5f}")

# The optimal holdings at t = 0.5 for target 1.5, in each regime.
z = 1.5
lam_free = lambda_star(free, FrontierQuery(x, 0, z))
lam_tied = lambda_star(tied, FrontierQuery(x, 0, z, "noshort"))
print(f"\nholdings at t = 0.5, wealth 1.1, target {z}")
for i in range(2):
    a = feedback_unconstrained(free, 0.5, 1.1, i, lam_free)
    b = feedback_noshort(tied, 0.5, 1.1, i, lam_tied)
    print(f"regime {i + 1}: free {np.round(a, 4)}   no short {np.round(b, 4)}")
