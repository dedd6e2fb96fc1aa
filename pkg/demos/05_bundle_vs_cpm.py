"""
Bundle method against the cutting-plane method
==============================================

Both methods keep one cut per dual component and iteration. The bundle
method adds a proximal term around its best point so far; the cutting-plane
method instead needs a box on the prices and jumps to its corners early on.
The subgradient baseline is shown for a fixed budget.
"""

from drmarket import SolverConfig, generate_default, run

scenario = generate_default(seed=42, users_per_aggregator=20)
results = {m: run(scenario, SolverConfig(method=m, max_iters=150 if m == "subgradient" else 500))
           for m in ("bundle", "cpm", "subgradient")}

for name, res in results.items():
    print(f"{name:12s} {res.iterations:4d} iterations  {res.termination:15s} best D {res.best_dual:.5f}")
print("cpm / bundle iterations:", results["cpm"].iterations / results["bundle"].iterations)

# the first few cpm steps hit the price box
print("\ncpm prices, first iterations (min, max):")
for row in results["cpm"].trace[:4]:
    print(f"  k={row.k}: {row.mu.min():7.2f} {row.mu.max():7.2f}")
