"""A one-regime, one-stock market where every quantity has a closed form.

The drift mu is the excess return over the bank account.  With r = 2%,
mu = 10% and sigma = 20% the Riccati solution is P_t = exp((2r - theta)(T - t))
with theta = mu^2 / sigma^2 = 0.25, so P_0 = exp(-0.21).  We solve
numerically, compare, and trace the frontier.
"""

import math

import numpy as np

from regime_mv import benchmarks, frontier, solve

model = benchmarks.scalar_model(rate=0.02, drift=0.10, vol=0.20)
sol = solve(model)
P0, h0, K0 = sol.initial(0)
print(f"P0 = {P0:.12f}   closed form {math.exp(-0.21):.12f}")
print(f"h0 = {h0:.12f}   closed form {math.exp(-0.02):.12f}")
print(f"K0 = {K0:.1e}  (zero: one regime means no rate risk)")

# The frontier is a parabola in (mean, variance) with its vertex at the
# riskless outcome x e^{rT}.
x = 1.0
targets = np.linspace(1.0, 2.0, 6)
print("\n   target      variance        std")
for p in frontier(sol, model, x, 0, "unconstrained", targets):
    print(f"{p.mean:8.3f} {p.variance:13.6f} {p.std:10.6f}")

a = P0 * h0 ** 2
print(f"\nslope of std against excess mean: {math.sqrt(a / (1 - a)):.6f}")
