"""
The price of robustness, out of sample
======================================

Protection is not free: the larger the uncertainty set a schedule must
survive, the lower its expected profit.  Whether the premium is worth
paying shows up only out of sample, by fixing each candidate schedule,
re-sampling demand and price deviations, and measuring the heat load
that could not be served.

This demo runs a small radius/budget grid on the winter day, evaluates
every method on one shared set of fresh scenarios, and prints the
Pareto-optimal configurations in (average profit, worst-case shedding).
Expect several minutes of solving.
"""

from chpdispatch.data import RunConfig, desk_instance
from chpdispatch.evaluation import format_summary_table, pareto_filter, sweep

cfg = RunConfig(instance="desk:winter", radius_mults=[2.8, 3.2],
                gammas=[2, 6], n_sample=1000, n_reduced=60, n_eval=60,
                seed=2025)

inst = desk_instance("winter")
result = sweep(inst, cfg.radius_mults, cfg.gammas, rules=("ldr", "pldr"),
               config=cfg)

reports = result.reports()
print(format_summary_table(reports))

frontier = pareto_filter(reports)
print()
print("Pareto-optimal in (max avg profit, min largest shedding):")
for rep in frontier.members:
    tag = rep.method
    if rep.radius_mult is not None:
        tag += f" r={rep.radius_mult:g} gamma={rep.gamma:g}"
    print(f"  {tag:24s} profit {rep.avg_profit:>12,.2f}  "
          f"largest LNS {rep.largest_lns:8.2f} MWh")

print()
print("The deterministic schedule tops the profit column and the shedding")
print("column at once: it earns the most on average and fails the hardest")
print("when demand surprises. Climbing the frontier toward zero shedding")
print("costs profit at every step; the improvement matrix below shows the")
print("part of that cost the piecewise rules win back.")
print()
print("PLDR - LDR counterpart improvement (rows: radius, cols: gamma):")
print(result.improvement_matrix())
