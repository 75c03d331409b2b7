"""
Linear vs piecewise-linear decision rules
=========================================

A linear rule must answer both directions of a demand deviation with the
same slope: whatever covers a shortfall also has to absorb a surplus.
Splitting the rule at zero frees the two directions, so an expensive
flexible unit can keep its full day-ahead dispatch and let some other
resource handle the upside.

This demo sweeps the uncertainty budget on the winter day and tracks the
extraction unit's total heat dispatch under both rule families, plus the
objective improvement from the split.  Expect a few minutes of solving.
"""

from chpdispatch.data import desk_instance
from chpdispatch.milp import SolverConfig
from chpdispatch.robust import (RuleKind, assemble_two_stage,
                                build_robust_counterpart,
                                nonanticipativity_mask, solve_robust)
from chpdispatch.uncertainty import demand_price_uncertainty, linearize_budget_set

RADIUS = 3.2
GAMMAS = (2, 6, 10)

inst = desk_instance("winter")
ext = [u.name for u in inst.units].index("EXT")
cfg = SolverConfig(mip_rel_gap=1e-6)

heat = {}
profit = {}
for gamma in GAMMAS:
    um = demand_price_uncertainty(inst.market.price_array(),
                                  inst.market.demand_array(),
                                  gamma=gamma, radius_mult=RADIUS)
    for rule in ("ldr", "pldr"):
        tsp = assemble_two_stage(inst, um)
        drs = nonanticipativity_mask(tsp.catalog, tsp.dim,
                                     RuleKind.from_label(rule))
        rc = build_robust_counterpart(tsp, linearize_budget_set(um.uset),
                                      um.moments, drs)
        policy, _ = solve_robust(rc, cfg)
        heat[(rule, gamma)] = policy.first_stage.q[ext].sum()
        profit[(rule, gamma)] = policy.objective
        print(f"gamma {gamma:2d} {rule:4s}: EXT heat "
              f"{heat[(rule, gamma)]:8.2f} MWh, profit "
              f"{policy.objective:,.2f}")

print()
print("gamma  EXT heat LDR  EXT heat PLDR  improvement (EUR)")
for gamma in GAMMAS:
    print(f"{gamma:5d}  {heat[('ldr', gamma)]:12.2f}  "
          f"{heat[('pldr', gamma)]:13.2f}  "
          f"{profit[('pldr', gamma)] - profit[('ldr', gamma)]:17,.2f}")

print()
print("Under linear rules the extraction dispatch backs off as the budget")
print("grows; the piecewise rule holds it steady and the objective gap is")
print("the price of forcing one slope to serve both deviation signs.")
