"""
The market operator's subproblem
================================

For fixed prices mu on the aggregator-users balance, the MO runs a
multi-period DC optimal power flow: it dispatches the three generators and
decides how much power P_DRA to sell to each aggregator. Higher prices make
the MO sell more, up to the 50 MW cap.
"""

import numpy as np

from drmarket.model import build_admittance, build_flow_matrix
from drmarket.scenario import generate_default
from drmarket.subproblems import MoSubproblem

inst = generate_default(seed=42, users_per_aggregator=0).materialize()
net = inst.network
print("admittance matrix B (p.u.):")
print(np.round(build_admittance(net), 2))

sub = MoSubproblem(net, inst.p_dra_max)  # matrices are assembled once
for price in (0.0, 10.0, 25.0, 40.0):
    sol = sub.solve(np.full((4, net.horizon), price))
    flows = build_flow_matrix(net) @ sol.theta[:, 0]
    print(f"\nmu = {price:4.0f} $/MWh  D0 = {sol.D0:10.3f}")
    print("  P_DRA slot 1 (MW):   ", np.round(sol.p_DRA[:, 0], 3) + 0.0)
    print("  generation slot 1:   ", np.round(sol.p_G[:, 0], 3))
    print("  line flows slot 1:   ", np.round(flows, 3))

# the MO's subgradient is -P_DRA, so it always lies in [-50, 0]
print("\ng0 range:", sol.g0.min(), sol.g0.max())
