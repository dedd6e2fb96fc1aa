"""
Dense QP solver
===============

Every optimization in the package, from the MO dispatch to the bundle
master, goes through one interior-point QP solver. Here it handles a small
problem with bounds and a coupling row, then an LP, then an infeasible one.
"""

import numpy as np

from drmarket import qp

# min x1^2 + x2^2 - 2 x1 - 4 x2  s.t.  x >= 0,  x1 + x2 <= 1
prob = qp.QpProblem(Q=2 * np.eye(2), c=[-2.0, -4.0], A_in=[[1.0, 1.0]], b_in=[1.0], lo=[0.0, 0.0])
sol = qp.solve(prob)
print("status      ", sol.status)
print("x           ", sol.x)  # (0, 1): the coupling row and x1 >= 0 are active
print("objective   ", sol.objective)
print("row price   ", sol.z_in, " bound prices", sol.z_lo + 0.0)
print("KKT residual", sol.kkt_residual, "after", sol.iterations, "iterations")

# the Lagrangian dual value at the returned multipliers closes the gap
print("dual value  ", qp.lagrangian_dual_value(prob, sol))

# Q may be omitted for an LP
lp = qp.solve(qp.QpProblem(None, [-1.0, -2.0], A_in=[[1, 1]], b_in=[4], lo=[0, 0], hi=[3, 2]))
print("\nLP optimum", lp.x, lp.objective)

# infeasible data is flagged rather than raised
bad = qp.solve(qp.QpProblem(None, [1.0], A_in=[[-1.0]], b_in=[-1.0], hi=[0.0]))
print("infeasible problem ->", bad.status)
