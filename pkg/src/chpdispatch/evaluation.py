"""Out-of-sample evaluation, Pareto filtering, and (radius, budget) sweeps.

The evaluation protocol fixes a candidate day-ahead schedule inside the
scenario-fan model over freshly resampled scenarios, lets recourse and heat
shedding absorb each realization, and reports probability-weighted profit
next to the largest and expected daily heat load not served (LNS).  A sweep
runs that protocol for the deterministic schedule, the stochastic program's
schedule and every robust counterpart on a (radius, budget) grid, sharing
one evaluation fan so the comparison is apples to apples.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import RunConfig
from .errors import InfeasibleRobust, InvalidSpec, SolverError
from .milp import SolverConfig, solve
from .robust import (RuleKind, assemble_two_stage, build_robust_counterpart,
                     nonanticipativity_mask, solve_robust)
from .stochastic import ScenarioSet, build_sp_fan, fast_forward_reduce, \
    fix_first_stage
from .system import ScheduleSolution, SystemInstance, \
    build_deterministic_milp, extract_schedule
from .uncertainty import demand_price_uncertainty, linearize_budget_set, \
    sample_scenarios

log = logging.getLogger(__name__)

METHOD_DET = "DET"
METHOD_SP = "SP"
RULE_METHOD = {"ldr": "RO-LDR", "pldr": "RO-PLDR"}


@dataclass
class EvaluationReport:
    """Out-of-sample scorecard of one fixed schedule.

    avg_profit is probability-weighted over the evaluation scenarios and
    never includes shed penalties; largest_lns and expected_lns aggregate
    the daily total of unserved heat per scenario.  The commitment summary
    (periods online and total heat per unit) describes the fixed first
    stage, not the recourse.
    """

    method: str
    avg_profit: float
    largest_lns: float
    expected_lns: float
    radius_mult: float | None = None
    gamma: float | None = None
    profits: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    periods_online: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    total_heat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.profits = np.asarray(self.profits, dtype=float)
        self.shed = np.asarray(self.shed, dtype=float)
        if self.expected_lns < -1e-9:
            raise InvalidSpec(f"negative expected LNS {self.expected_lns}")
        if self.expected_lns > self.largest_lns + 1e-9:
            raise InvalidSpec(
                f"expected LNS {self.expected_lns} exceeds largest "
                f"{self.largest_lns}")

    @property
    def point(self) -> tuple:
        """(avg_profit, largest_lns) coordinates used by Pareto filtering."""
        return (self.avg_profit, self.largest_lns)


def out_of_sample_evaluate(instance: SystemInstance, x_star: ScheduleSolution,
                           eval_scenarios: ScenarioSet, seed: int = 0,
                           method: str = METHOD_DET,
                           radius_mult: float | None = None,
                           gamma: float | None = None,
                           shed_penalty: float = 10000.0,
                           config: SolverConfig | None = None) -> EvaluationReport:
    """Fix a schedule over an evaluation fan and score it.

    The schedule is pinned inside the scenario-fan model with shed slack, so
    every statically feasible candidate gets a score; recourse re-optimizes
    per scenario.  Shed is priced at shed_penalty inside the solver only;
    reported profit excludes it.

    Raises:
        InfeasibleFirstStage: x_star breaks a static constraint family.
        SolverError: the evaluation model did not solve to optimality.
    """
    if config is None:
        config = SolverConfig(seed=seed)
    ev = fix_first_stage(build_sp_fan(instance, eval_scenarios), x_star,
                         shed_penalty=shed_penalty)
    result = solve(ev.model, config)
    if not result.ok:
        raise SolverError(
            f"evaluation model finished with status {result.status!r}")
    profits = ev.scenario_profits(result)
    # daily unserved heat per scenario; solver noise may dip below zero
    totals = np.clip(ev.shed_matrix(result).sum(axis=1), 0.0, None)
    probs = eval_scenarios.probs
    return EvaluationReport(
        method=method,
        avg_profit=float(probs @ profits),
        largest_lns=float(totals.max()),
        expected_lns=float(probs @ totals),
        radius_mult=radius_mult,
        gamma=gamma,
        profits=profits,
        shed=totals,
        periods_online=x_star.periods_online(),
        total_heat=x_star.q.sum(axis=1))


@dataclass
class ParetoFrontier:
    """Reports non-dominated in (maximize avg_profit, minimize largest_LNS)."""

    members: list

    def __len__(self) -> int:
        return len(self.members)

    def points(self) -> list:
        return [r.point for r in self.members]


def pareto_filter(reports: list) -> ParetoFrontier:
    """Exact non-dominated subset; exact ties are all retained.

    A report is dropped iff some other report has profit at least as high
    and largest LNS at least as low, with one of the two strict.

    Raises:
        InvalidSpec: empty input.
    """
    if not reports:
        raise InvalidSpec("cannot filter an empty report list")
    order = sorted(range(len(reports)),
                   key=lambda i: (-reports[i].avg_profit,
                                  reports[i].largest_lns))
    members = []
    best_lns = best_profit = None
    for i in order:
        r = reports[i]
        if best_lns is None or r.largest_lns < best_lns:
            members.append(r)
            best_lns, best_profit = r.largest_lns, r.avg_profit
        elif r.largest_lns == best_lns and r.avg_profit == best_profit:
            members.append(r)  # exact tie
    return ParetoFrontier(members=members)


@dataclass
class SweepCell:
    """One robust configuration in a sweep grid."""

    radius_mult: float
    gamma: float
    rule: str
    status: str                      # "ok" | "infeasible"
    objective: float | None = None   # counterpart profit bound
    report: EvaluationReport | None = None


@dataclass
class SweepResult:
    """Everything a sweep produced, keyed for deterministic serialization."""

    radius_mults: tuple
    gammas: tuple
    rules: tuple
    det_report: EvaluationReport
    sp_report: EvaluationReport | None
    cells: dict
    eval_scenarios: ScenarioSet

    def cell(self, radius_mult: float, gamma: float, rule: str) -> SweepCell:
        return self.cells[(radius_mult, gamma, rule)]

    def reports(self) -> list:
        """All reports in fixed order: DET, SP, then grid row-major."""
        out = [self.det_report]
        if self.sp_report is not None:
            out.append(self.sp_report)
        for key in sorted(self.cells):
            if self.cells[key].report is not None:
                out.append(self.cells[key].report)
        return out

    def improvement_matrix(self) -> np.ndarray:
        """Counterpart profit gain of the piecewise rule over the linear one,
        indexed (radius, gamma); NaN where either cell is unavailable."""
        out = np.full((len(self.radius_mults), len(self.gammas)), np.nan)
        if not {"ldr", "pldr"} <= set(self.rules):
            return out
        for a, r in enumerate(self.radius_mults):
            for b, g in enumerate(self.gammas):
                lin = self.cells[(r, g, "ldr")]
                pw = self.cells[(r, g, "pldr")]
                if lin.objective is not None and pw.objective is not None:
                    out[a, b] = pw.objective - lin.objective
        return out


def _solve_cell(instance, radius_mult, gamma, rule, cfg, solver_cfg):
    um = demand_price_uncertainty(
        instance.market.price_array(), instance.market.demand_array(),
        gamma=gamma, radius_mult=radius_mult,
        demand_rmse=cfg.demand_rmse, price_rmse=cfg.price_rmse,
        correlation=cfg.correlation)
    tsp = assemble_two_stage(instance, um)
    drs = nonanticipativity_mask(tsp.catalog, tsp.dim,
                                 RuleKind.from_label(rule))
    rc = build_robust_counterpart(tsp, linearize_budget_set(um.uset),
                                  um.moments, drs)
    try:
        policy, _ = solve_robust(rc, solver_cfg)
    except InfeasibleRobust:
        return SweepCell(radius_mult, gamma, rule, status="infeasible")
    return policy


def sweep(instance: SystemInstance, radius_mults, gammas,
          rules=("ldr", "pldr"), config: RunConfig | None = None,
          jobs: int | None = None) -> SweepResult:
    """Score DET, SP and every robust configuration on one shared fan.

    Optimization scenarios are sampled with the config seed and reduced;
    evaluation scenarios are resampled with the offset seed, so they are
    out of sample by construction.  Infeasible robust cells are recorded
    and skipped, not fatal.  Grid cells solve on a bounded worker pool;
    results are assembled in grid order regardless of completion order.
    """
    cfg = config if config is not None else RunConfig()
    if not radius_mults or not gammas or not rules:
        raise InvalidSpec("sweep needs nonempty radius, gamma and rule grids")
    radius_mults = tuple(float(r) for r in radius_mults)
    gammas = tuple(float(g) for g in gammas)
    rules = tuple(rules)
    jobs = cfg.jobs if jobs is None else jobs
    solver_cfg = SolverConfig(backend=cfg.backend, mip_rel_gap=cfg.mip_rel_gap,
                              time_limit=cfg.time_limit, seed=cfg.seed)

    # sampling wants the physical distribution: a budget covering the full
    # horizon keeps the moment model at the raw (uncapped) Gaussian values
    T_s = instance.market.demand_array().size
    um_s = demand_price_uncertainty(
        instance.market.price_array(), instance.market.demand_array(),
        gamma=float(T_s), radius_mult=1.0, demand_rmse=cfg.demand_rmse,
        price_rmse=cfg.price_rmse, correlation=cfg.correlation)
    eval_scen = sample_scenarios(um_s.moments, um_s.uset, cfg.n_eval,
                                 seed=cfg.seed + cfg.eval_seed_offset)

    det_res = solve(build_deterministic_milp(instance), solver_cfg)
    if not det_res.ok:
        raise SolverError(f"deterministic stage failed: {det_res.status}")
    x_det = extract_schedule(instance, det_res)
    det_report = out_of_sample_evaluate(
        instance, x_det, eval_scen, seed=cfg.seed, method=METHOD_DET,
        shed_penalty=cfg.shed_penalty, config=solver_cfg)

    sp_report = None
    if "sp" in cfg.methods:
        full = sample_scenarios(um_s.moments, um_s.uset, cfg.n_sample,
                                seed=cfg.seed)
        reduced = fast_forward_reduce(full, cfg.n_reduced)
        sp_res = solve(build_sp_fan(instance, reduced).model, solver_cfg)
        if not sp_res.ok:
            raise SolverError(f"stochastic stage failed: {sp_res.status}")
        x_sp = extract_schedule(instance, sp_res)
        sp_report = out_of_sample_evaluate(
            instance, x_sp, eval_scen, seed=cfg.seed, method=METHOD_SP,
            shed_penalty=cfg.shed_penalty, config=solver_cfg)

    grid = [(r, g, rule) for r in radius_mults for g in gammas
            for rule in rules]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        solved = list(pool.map(
            lambda key: _solve_cell(instance, *key, cfg, solver_cfg), grid))

    cells = {}
    for key, outcome in zip(grid, solved):
        r, g, rule = key
        if isinstance(outcome, SweepCell):
            cells[key] = outcome
            continue
        report = out_of_sample_evaluate(
            instance, outcome.first_stage, eval_scen, seed=cfg.seed,
            method=RULE_METHOD[rule], radius_mult=r, gamma=g,
            shed_penalty=cfg.shed_penalty, config=solver_cfg)
        cells[key] = SweepCell(r, g, rule, status="ok",
                               objective=outcome.objective, report=report)

    result = SweepResult(radius_mults=radius_mults, gammas=gammas,
                         rules=rules, det_report=det_report,
                         sp_report=sp_report, cells=cells,
                         eval_scenarios=eval_scen)
    _soft_check_improvement(result)
    return result


def _soft_check_improvement(result: SweepResult) -> None:
    """Out-of-sample gain from the piecewise rule should not exceed the
    counterpart's own gain; sampling can break this, so only log it."""
    theo = result.improvement_matrix()
    for a, r in enumerate(result.radius_mults):
        for b, g in enumerate(result.gammas):
            if np.isnan(theo[a, b]):
                continue
            lin = result.cells[(r, g, "ldr")].report
            pw = result.cells[(r, g, "pldr")].report
            oos = pw.avg_profit - lin.avg_profit
            if oos > theo[a, b] + 1e-6:
                log.warning(
                    "out-of-sample improvement %.2f exceeds counterpart "
                    "improvement %.2f at radius %s gamma %s", oos,
                    theo[a, b], r, g)


# -- serialization ------------------------------------------------------


REPORT_COLUMNS = ("method", "radius_mult", "gamma", "avg_profit",
                  "largest_lns", "expected_lns")


def _cellstr(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_reports_csv(path, reports: list, lns_price: float | None = None) -> None:
    """One row per report; optional post-hoc column discounting profit by a
    price per unserved unit of heat."""
    header = list(REPORT_COLUMNS)
    if lns_price is not None:
        header.append("discounted_profit")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in reports:
            row = [r.method, _cellstr(r.radius_mult), _cellstr(r.gamma),
                   _cellstr(r.avg_profit), _cellstr(r.largest_lns),
                   _cellstr(r.expected_lns)]
            if lns_price is not None:
                row.append(_cellstr(r.avg_profit - lns_price * r.expected_lns))
            fh.write(",".join(row) + "\n")


def write_long_csv(path, reports: list) -> None:
    """Plot-ready long format: one row per report per evaluation scenario."""
    with open(path, "w") as fh:
        fh.write("method,radius_mult,gamma,scenario,profit,shed\n")
        for r in reports:
            for s in range(r.profits.size):
                fh.write(",".join([
                    r.method, _cellstr(r.radius_mult), _cellstr(r.gamma),
                    str(s), repr(float(r.profits[s])),
                    repr(float(r.shed[s]))]) + "\n")


def format_summary_table(reports: list) -> str:
    """Fixed-width table in the report-card layout used throughout."""
    lines = [f"{'Method':8} {'Radius':>7} {'Gamma':>6} {'Avg. profit':>14} "
             f"{'Largest LNS':>12} {'Expected LNS':>13}"]
    for r in reports:
        radius = "" if r.radius_mult is None else f"{r.radius_mult:.2f}"
        gamma = "" if r.gamma is None else f"{r.gamma:g}"
        lines.append(f"{r.method:8} {radius:>7} {gamma:>6} "
                     f"{r.avg_profit:>14.2f} {r.largest_lns:>12.2f} "
                     f"{r.expected_lns:>13.2f}")
    return "\n".join(lines)
