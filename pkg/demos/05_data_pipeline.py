"""
From a year of data to a solvable day
=====================================

The bundled desk days are handy, but real studies start from hourly
series.  This demo generates a synthetic year, rescales the load so the
peaker's annual energy share hits a target, picks the winter week that
contains the annual peak, and solves the peak day deterministically
through the same configuration path the command line uses.
"""

import os
import tempfile

import numpy as np

from chpdispatch.data import (LOAD_COLUMNS, PRICE_COLUMNS, RawSeries,
                              RunConfig, desk_units, rescale_load,
                              resolve_instance, select_week, synth_year,
                              write_series)
from chpdispatch.milp import SolverConfig, solve
from chpdispatch.system import build_deterministic_milp

load, price = synth_year(seed=2025)
print(f"synthetic year: {len(load)} hours, "
      f"load {load.values.min():.0f}..{load.values.max():.0f} MWh/h")

# calibrate the system size: the peaker should serve 0.5% of annual energy
scale, scaled = rescale_load(load.values, desk_units(), peaker_share=0.005)
load = RawSeries(timestamps=load.timestamps, values=scaled)
print(f"rescaled by {scale:.4f}; peak load now {scaled.max():.0f} MWh/h")

# the winter week holds the annual peak by construction
week = select_week(load, 30)
assert week.values.max() == scaled.max()
peak_hour = int(np.argmax(scaled))
peak_day = peak_hour // 24 + 1
print(f"annual peak in week 30, day {peak_day} of the dataset")

with tempfile.TemporaryDirectory() as tmp:
    p_path = os.path.join(tmp, "prices.csv")
    l_path = os.path.join(tmp, "load.csv")
    write_series(p_path, price, *PRICE_COLUMNS)
    write_series(l_path, load, *LOAD_COLUMNS)

    cfg = RunConfig(instance="desk:winter", prices_csv=p_path,
                    load_csv=l_path, day=peak_day)
    inst = resolve_instance(cfg)
    print(f"built a {inst.horizon}h instance around the peak "
          f"(demand {min(inst.market.demand):.0f}.."
          f"{max(inst.market.demand):.0f} MWh)")

    result = solve(build_deterministic_milp(inst), SolverConfig())
    print(f"deterministic profit on the peak day: "
          f"{result.objective:,.2f} EUR")
