"""
Clearing the market by dual decomposition
=========================================

The MO broadcasts prices, aggregators answer, and the prices are updated
with the disaggregated proximal bundle method until the predicted increase
eta falls below 1e-3. The result is checked against the centralized QP,
which is only tractable because this scenario is small.
"""

import numpy as np

from drmarket import SolverConfig, generate_default, run, solve_centralized

scenario = generate_default(seed=42, users_per_aggregator=20)
res = run(scenario, SolverConfig(method="bundle"))

print(" k   D(mu)          eta        step")
for row in res.trace[:5] + res.trace[-3:]:
    print(f"{row.k:3d}  {row.dual_value:12.5f}  {row.eta:9.2e}  {row.step_type}")
print(f"\n{res.termination} after {res.iterations} iterations, {res.messages} messages")

cen = solve_centralized(scenario)
gap = (cen.f_star - res.final_dual) / cen.f_star
print(f"centralized optimum {cen.f_star:.5f}, dual {res.final_dual:.5f}, relative gap {gap:.1e}")

# prices at 3am per aggregator, distributed and centralized
print("mu*[:, 2]      ", np.round(res.mu_star[:, 2], 3))
print("centralized mu ", np.round(cen.mu[:, 2], 3))
