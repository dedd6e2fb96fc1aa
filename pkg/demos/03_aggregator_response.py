"""
Aggregator response to prices
=============================

With zero user utilities each PHEV's problem is a fractional knapsack: fill
the cheapest hours of the charging window first. The aggregator only reports
its total consumption (MW) and dual value back to the MO.
"""

import numpy as np

from drmarket.model import AggregatorModel, ApplianceSpec
from drmarket.subproblems import aggregator_respond, schedule_appliance

prices = np.array([30.0, 12.0, 18.0, 9.0, 25.0, 14.0, 40.0] + [20.0] * 17)

# 11 kWh at up to 2.3 kWh per hour, charging between 1am and 6am (slots 1..6)
phev = ApplianceSpec(energy_total=11.0, p_min=0.0, p_max=2.3, t_start=1, t_end=6)
p, cost = schedule_appliance(phev, prices)
print("schedule (kWh):", p[:7])
print("cost:", cost, "=", prices @ p)

# ties go to the earliest slot
flat, _ = schedule_appliance(ApplianceSpec(4.0, 0.0, 2.0, 1, 3), np.full(3, 5.0))
print("flat prices:   ", flat)

# an aggregator with a few users; only totals cross to the MO
users = tuple((ApplianceSpec(e, 0.0, pm, 1, end),) for e, pm, end in
              [(10, 2.1, 6), (12, 2.5, 7), (11, 2.3, 6), (12, 2.1, 6)])
agg = AggregatorModel(id=1, bus=3, p_dra_max=50.0, users=users)
resp = aggregator_respond(agg, prices, keep_schedules=True)
print("\nconsumption (MW):", np.round(resp.consumption[:7], 5))
print("dual value:      ", resp.dual_value)
print("per-user schedules stay local:", resp.schedules.shape)
