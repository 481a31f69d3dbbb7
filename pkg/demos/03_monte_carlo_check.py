"""Does the computed frontier survive contact with simulated paths?

We pick a target mean, run the optimal feedback policy forward on 100,000
paths (exact regime switches and jump times, Euler steps for the diffusion)
and compare the sample mean and variance of terminal wealth with the target
and the closed-form frontier variance.
"""

import time

from regime_mv import (FrontierQuery, SimConfig, benchmarks, solve, solve_constrained,
                       verify_frontier)

model = benchmarks.shock_model()
z = 1.3

for mode, solver in (("unconstrained", solve), ("noshort", solve_constrained)):
    sol = solver(model)
    start = time.perf_counter()
    rep = verify_frontier(model, sol, FrontierQuery(1.0, 0, z, mode),
                          SimConfig(paths=100_000, master_seed=7, mode=mode))
    print(f"[{mode}] {time.perf_counter() - start:.1f}s")
    print(f"  mean      {rep.mean_hat:.5f} +- {rep.se_mean:.5f}   target {rep.target_mean}")
    print(f"  variance  {rep.var_hat:.5f} +- {rep.se_var:.5f}   frontier {rep.closed_form_var:.5f}")
    print(f"  verdict   {'agrees' if rep.passed else 'DISAGREES'}")

# Same seed, same numbers, however many threads run the blocks.
a = verify_frontier(model, solve(model), FrontierQuery(1.0, 0, 1.2),
                    SimConfig(paths=20_000, master_seed=3, workers=1))
b = verify_frontier(model, solve(model), FrontierQuery(1.0, 0, 1.2),
                    SimConfig(paths=20_000, master_seed=3, workers=4))
print("\nreports identical across worker counts:", a.to_json() == b.to_json())
