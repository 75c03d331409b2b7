"""Command-line front end: configure once, run any pipeline stage.

Subcommands mirror the library layers: `det` solves the deterministic
schedule, `robust` the counterpart grid, `sp` the scenario-fan program,
`evaluate` scores the configured methods out of sample, `sweep` adds the
improvement matrix and Pareto frontier artifacts, and `synth` generates a
synthetic hourly year.  Every run reads one YAML configuration and writes
deterministic CSV artifacts into the output directory.  Exit codes: 0 on
success, 2 for configuration problems, 3 for solver failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .data import (LOAD_COLUMNS, PRICE_COLUMNS, RunConfig, load_config,
                   resolve_instance, synth_year, write_series)
from .errors import (BackendUnavailable, ChpDispatchError, ConfigError,
                     GapError, InfeasibleData, InfeasibleFirstStage,
                     InfeasibleRobust, InvalidSpec, ParseError, SolverError)
from .evaluation import (format_summary_table, pareto_filter, sweep,
                         write_long_csv, write_reports_csv)
from .milp import SolverConfig, solve, write_mps
from .robust import (RuleKind, assemble_two_stage, build_robust_counterpart,
                     nonanticipativity_mask, solve_robust, write_policy_csv)
from .stochastic import build_sp_fan, fast_forward_reduce, write_scenarios
from .system import build_deterministic_milp, extract_schedule
from .uncertainty import (demand_price_uncertainty, linearize_budget_set,
                          sample_scenarios)

_CONFIG_ERRORS = (ConfigError, ParseError, GapError, InvalidSpec,
                  InfeasibleData, FileNotFoundError)
_SOLVER_ERRORS = (SolverError, BackendUnavailable, InfeasibleRobust,
                  InfeasibleFirstStage)


def _solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(backend=cfg.backend, mip_rel_gap=cfg.mip_rel_gap,
                        time_limit=cfg.time_limit, seed=cfg.seed)


def _uncertainty(cfg: RunConfig, instance, gamma, radius_mult):
    return demand_price_uncertainty(
        instance.market.price_array(), instance.market.demand_array(),
        gamma=gamma, radius_mult=radius_mult, demand_rmse=cfg.demand_rmse,
        price_rmse=cfg.price_rmse, correlation=cfg.correlation)


def _write_schedule_csv(path, instance, sched) -> None:
    with open(path, "w") as fh:
        fh.write("entity,t,v,y,z,p,q,f,u,s\n")
        for k, unit in enumerate(instance.units):
            for t in range(instance.horizon):
                fh.write(",".join([
                    unit.name, str(t + 1), str(int(round(sched.v[k, t]))),
                    str(int(round(sched.y[k, t]))),
                    str(int(round(sched.z[k, t]))),
                    repr(float(sched.p[k, t])), repr(float(sched.q[k, t])),
                    repr(float(sched.f[k, t])), "", ""]) + "\n")
        for i, st in enumerate(instance.storages):
            for t in range(instance.horizon):
                fh.write(",".join([
                    st.name, str(t + 1), "", "", "", "", "", "",
                    repr(float(sched.u[i, t])),
                    repr(float(sched.s[i, t]))]) + "\n")


def _write_objective_csv(path, rows) -> None:
    """Model-stage report: one row per solved model, no evaluation columns."""
    with open(path, "w") as fh:
        fh.write("method,radius_mult,gamma,objective\n")
        for method, radius, gamma, objective in rows:
            fh.write(",".join([
                method,
                "" if radius is None else repr(float(radius)),
                "" if gamma is None else repr(float(gamma)),
                repr(float(objective))]) + "\n")


def cmd_det(cfg: RunConfig, out: str, dump_mps: bool) -> int:
    instance = resolve_instance(cfg)
    model = build_deterministic_milp(instance)
    if dump_mps:
        write_mps(model, os.path.join(out, "det.mps"))
    result = solve(model, _solver_config(cfg))
    if not result.ok:
        raise SolverError(f"deterministic solve ended {result.status!r}")
    sched = extract_schedule(instance, result)
    _write_schedule_csv(os.path.join(out, "schedule_det.csv"), instance, sched)
    _write_objective_csv(os.path.join(out, "reports.csv"),
                         [("DET", None, None, result.objective)])
    print(f"deterministic profit {result.objective:.2f}")
    return 0


def cmd_robust(cfg: RunConfig, out: str, dump_mps: bool) -> int:
    instance = resolve_instance(cfg)
    solver_cfg = _solver_config(cfg)
    reports = []
    for radius in cfg.radius_mults:
        for gamma in cfg.gammas:
            for rule in cfg.rules:
                um = _uncertainty(cfg, instance, gamma, radius)
                tsp = assemble_two_stage(instance, um)
                drs = nonanticipativity_mask(tsp.catalog, tsp.dim,
                                             RuleKind.from_label(rule))
                rc = build_robust_counterpart(
                    tsp, linearize_budget_set(um.uset), um.moments, drs)
                tag = f"{rule}_r{radius:g}_g{gamma:g}"
                if dump_mps:
                    write_mps(rc.model, os.path.join(out, f"robust_{tag}.mps"))
                try:
                    policy, _ = solve_robust(rc, solver_cfg)
                except InfeasibleRobust:
                    print(f"{tag}: infeasible", file=sys.stderr)
                    continue
                write_policy_csv(os.path.join(out, f"policy_{tag}.csv"),
                                 policy)
                method = "RO-LDR" if rule == "ldr" else "RO-PLDR"
                reports.append((method, radius, gamma, policy.objective))
                print(f"{tag}: profit bound {policy.objective:.2f}")
    if not reports:
        raise SolverError("every robust configuration was infeasible")
    _write_objective_csv(os.path.join(out, "reports.csv"), reports)
    return 0


def cmd_sp(cfg: RunConfig, out: str, dump_mps: bool) -> int:
    instance = resolve_instance(cfg)
    # full-horizon budget: sample from the raw physical distribution
    um = _uncertainty(cfg, instance, gamma=float(instance.horizon),
                      radius_mult=1.0)
    full = sample_scenarios(um.moments, um.uset, cfg.n_sample, seed=cfg.seed)
    reduced = fast_forward_reduce(full, cfg.n_reduced)
    write_scenarios(os.path.join(out, "scenarios.csv"), reduced)
    sp = build_sp_fan(instance, reduced)
    if dump_mps:
        write_mps(sp.model, os.path.join(out, "sp.mps"))
    result = solve(sp.model, _solver_config(cfg))
    if not result.ok:
        raise SolverError(f"stochastic solve ended {result.status!r}")
    sched = sp.first_stage_schedule(result)
    _write_schedule_csv(os.path.join(out, "schedule_sp.csv"), instance, sched)
    _write_objective_csv(os.path.join(out, "reports.csv"),
                         [("SP", None, None, result.objective)])
    print(f"stochastic expected profit {result.objective:.2f}")
    return 0


def _run_grid(cfg: RunConfig, out: str):
    instance = resolve_instance(cfg)
    result = sweep(instance, cfg.radius_mults, cfg.gammas,
                   rules=tuple(cfg.rules), config=cfg)
    reports = result.reports()
    write_reports_csv(os.path.join(out, "reports.csv"), reports)
    write_long_csv(os.path.join(out, "long.csv"), reports)
    print(format_summary_table(reports))
    return result, reports


def cmd_evaluate(cfg: RunConfig, out: str, dump_mps: bool) -> int:
    _run_grid(cfg, out)
    return 0


def cmd_sweep(cfg: RunConfig, out: str, dump_mps: bool) -> int:
    result, reports = _run_grid(cfg, out)
    imp = result.improvement_matrix()
    with open(os.path.join(out, "improvement.csv"), "w") as fh:
        fh.write("radius_mult,gamma,pldr_minus_ldr\n")
        for a, radius in enumerate(result.radius_mults):
            for b, gamma in enumerate(result.gammas):
                val = "" if np.isnan(imp[a, b]) else repr(float(imp[a, b]))
                fh.write(f"{radius!r},{gamma!r},{val}\n")
    frontier = pareto_filter(reports)
    write_reports_csv(os.path.join(out, "pareto.csv"), frontier.members)
    return 0


def cmd_synth(cfg: RunConfig, out: str, dump_mps: bool) -> int:
    load, price = synth_year(cfg.seed)
    write_series(os.path.join(out, "prices.csv"), price, *PRICE_COLUMNS)
    write_series(os.path.join(out, "load.csv"), load, *LOAD_COLUMNS)
    print(f"wrote synthetic year ({len(load.values)} hours) to {out}")
    return 0


_COMMANDS = {"det": cmd_det, "robust": cmd_robust, "sp": cmd_sp,
             "evaluate": cmd_evaluate, "sweep": cmd_sweep, "synth": cmd_synth}
_HELP = {
    "det": "solve the deterministic schedule at nominal data",
    "robust": "solve the robust counterpart over the configured grid",
    "sp": "solve the scenario-fan stochastic program",
    "evaluate": "score the configured methods out of sample",
    "sweep": "full grid study with improvement matrix and Pareto frontier",
    "synth": "generate a synthetic hourly year of prices and load",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chpdispatch",
        description="Day-ahead dispatch of heat-and-power portfolios "
                    "under uncertainty")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", help="RunConfig YAML path")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--jobs", type=int, help="worker pool size")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--dump-mps", action="store_true",
                       help="also write the built models as MPS files")
    return parser


def _configure(args) -> tuple:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    out = args.out if args.out else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, out = _configure(args)
        return _COMMANDS[args.command](cfg, out, args.dump_mps)
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except _SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except ChpDispatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
