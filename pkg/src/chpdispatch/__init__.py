"""Day-ahead commitment and dispatch of combined heat-and-power portfolios.

Subpackages cover the deterministic unit-commitment model, budget uncertainty
sets with moment data, affinely adjustable robust counterparts, a scenario
based stochastic baseline, out-of-sample evaluation, solver backends and
data handling.
"""

__version__ = "0.1.0"
