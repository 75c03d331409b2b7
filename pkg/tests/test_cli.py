"""Command-line pipelines: artifacts, exit codes, determinism."""

import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from chpdispatch.cli import main
from chpdispatch.data import (RunConfig, save_config, save_instance,
                              load_series, PRICE_COLUMNS, LOAD_COLUMNS)
from chpdispatch.milp import SolverConfig, read_mps, solve
from chpdispatch.system import (MarketSeries, StorageSpec, SystemInstance,
                                UnitKind, UnitSpec, build_deterministic_milp)


def flex_instance(T=3):
    unit = UnitSpec(name="H", kind=UnitKind.HEAT_ONLY, phi_q=1.0, f_max=100.0,
                    r_up=100.0, r_dn=100.0, q_max=100.0, c_fuel=5.0,
                    c_onl=1.0, v_init=1, f_init=20.0, flexible=True)
    st = StorageSpec(name="ST", s_max=30.0, u_min=-10.0, u_max=10.0,
                     s_init=15.0)
    market = MarketSeries(price=(20.0,) * T, demand=(40.0,) * T)
    return SystemInstance(units=(unit,), storages=(st,), market=market)


@pytest.fixture
def tiny_setup(tmp_path):
    """An instance file plus a small-grid config file pointing at it."""
    inst_path = str(tmp_path / "instance.yaml")
    save_instance(flex_instance(), inst_path)
    cfg = RunConfig(instance=inst_path, radius_mults=[0.5, 1.0],
                    gammas=[1, 2], n_sample=150, n_reduced=15, n_eval=25,
                    seed=99, out_dir=str(tmp_path / "runs"))
    cfg_path = str(tmp_path / "config.yaml")
    save_config(cfg, cfg_path)
    return cfg, cfg_path, tmp_path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_det_writes_one_row_report(tiny_setup):
    cfg, cfg_path, tmp = tiny_setup
    out = str(tmp / "det")
    assert main(["det", "--config", cfg_path, "--out", out]) == 0
    rows = read_rows(os.path.join(out, "reports.csv"))
    assert len(rows) == 1
    assert rows[0]["method"] == "DET"
    res = solve(build_deterministic_milp(flex_instance()),
                SolverConfig(mip_rel_gap=1e-6))
    assert float(rows[0]["objective"]) == pytest.approx(res.objective,
                                                        abs=1e-6)
    sched = read_rows(os.path.join(out, "schedule_det.csv"))
    assert {r["entity"] for r in sched} == {"H", "ST"}
    assert len(sched) == 2 * 3


def test_det_dump_mps_round_trips(tiny_setup):
    cfg, cfg_path, tmp = tiny_setup
    out = str(tmp / "detm")
    assert main(["det", "--config", cfg_path, "--out", out,
                 "--dump-mps"]) == 0
    model = read_mps(os.path.join(out, "det.mps"))
    res = solve(model, SolverConfig(mip_rel_gap=1e-6))
    direct = solve(build_deterministic_milp(flex_instance()),
                   SolverConfig(mip_rel_gap=1e-6))
    assert res.objective == pytest.approx(direct.objective, abs=1e-6)


def test_robust_writes_policies_and_reports(tiny_setup):
    cfg, cfg_path, tmp = tiny_setup
    out = str(tmp / "rob")
    assert main(["robust", "--config", cfg_path, "--out", out]) == 0
    rows = read_rows(os.path.join(out, "reports.csv"))
    # 2 radii x 2 gammas x 2 rules
    assert len(rows) == 8
    assert {r["method"] for r in rows} == {"RO-LDR", "RO-PLDR"}
    for radius in (0.5, 1.0):
        for gamma in (1, 2):
            for rule in ("ldr", "pldr"):
                assert os.path.exists(os.path.join(
                    out, f"policy_{rule}_r{radius:g}_g{gamma:g}.csv"))
    # the bound cannot beat the nominal optimum
    det = solve(build_deterministic_milp(flex_instance()),
                SolverConfig(mip_rel_gap=1e-6)).objective
    for row in rows:
        assert float(row["objective"]) <= det + 1e-6


def test_sp_writes_schedule_and_scenarios(tiny_setup):
    cfg, cfg_path, tmp = tiny_setup
    out = str(tmp / "sp")
    assert main(["sp", "--config", cfg_path, "--out", out]) == 0
    rows = read_rows(os.path.join(out, "reports.csv"))
    assert len(rows) == 1 and rows[0]["method"] == "SP"
    scen = read_rows(os.path.join(out, "scenarios.csv"))
    # n_reduced scenarios x T periods
    assert len(scen) == 15 * 3


def test_sweep_grid_cardinality(tiny_setup):
    cfg, cfg_path, tmp = tiny_setup
    out = str(tmp / "sweep")
    assert main(["sweep", "--config", cfg_path, "--out", out]) == 0
    rows = read_rows(os.path.join(out, "reports.csv"))
    # 8 robust rows plus the DET and SP baselines
    assert len(rows) == 10
    methods = [r["method"] for r in rows]
    assert methods.count("DET") == 1 and methods.count("SP") == 1
    assert methods.count("RO-LDR") == 4 and methods.count("RO-PLDR") == 4
    imp = read_rows(os.path.join(out, "improvement.csv"))
    assert len(imp) == 4
    for row in imp:
        assert float(row["pldr_minus_ldr"]) >= -1e-6
    pareto = read_rows(os.path.join(out, "pareto.csv"))
    assert 1 <= len(pareto) <= len(rows)
    kept = {(r["method"], r["radius_mult"], r["gamma"]) for r in pareto}
    full = {(r["method"], r["radius_mult"], r["gamma"]) for r in rows}
    assert kept <= full


def test_evaluate_is_deterministic(tiny_setup):
    cfg, cfg_path, tmp = tiny_setup
    outs = []
    for tag in ("a", "b"):
        out = str(tmp / f"eval_{tag}")
        assert main(["evaluate", "--config", cfg_path, "--out", out]) == 0
        outs.append(out)
    for name in ("reports.csv", "long.csv"):
        with open(os.path.join(outs[0], name), "rb") as fh:
            first = fh.read()
        with open(os.path.join(outs[1], name), "rb") as fh:
            second = fh.read()
        assert first == second, name


def test_synth_writes_year(tmp_path):
    out = str(tmp_path / "year")
    assert main(["synth", "--out", out, "--seed", "7"]) == 0
    prices = load_series(os.path.join(out, "prices.csv"), *PRICE_COLUMNS)
    load = load_series(os.path.join(out, "load.csv"), *LOAD_COLUMNS)
    assert len(prices) == 8760 and len(load) == 8760
    assert load.values.min() > 0


def test_synth_seed_controls_output(tmp_path):
    paths = []
    for tag, seed in (("a", "3"), ("b", "3"), ("c", "4")):
        out = str(tmp_path / tag)
        assert main(["synth", "--out", out, "--seed", seed]) == 0
        with open(os.path.join(out, "load.csv"), "rb") as fh:
            paths.append(fh.read())
    assert paths[0] == paths[1]
    assert paths[0] != paths[2]


def test_unknown_config_key_exits_2(tmp_path):
    cfg_path = str(tmp_path / "bad.yaml")
    with open(cfg_path, "w") as fh:
        fh.write("instance: 'desk:spring'\nnot_a_field: 1\n")
    assert main(["det", "--config", cfg_path,
                 "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert main(["det", "--config", str(tmp_path / "absent.yaml"),
                 "--out", str(tmp_path / "o")]) == 2


def test_all_infeasible_robust_exits_3(tmp_path):
    inst_path = str(tmp_path / "instance.yaml")
    save_instance(flex_instance(), inst_path)
    cfg = RunConfig(instance=inst_path, radius_mults=[50.0], gammas=[3],
                    rules=["ldr"], out_dir=str(tmp_path / "runs"))
    cfg_path = str(tmp_path / "config.yaml")
    save_config(cfg, cfg_path)
    assert main(["robust", "--config", cfg_path,
                 "--out", str(tmp_path / "rob")]) == 3


def test_console_entry_point_runs(tmp_path):
    out = str(tmp_path / "year")
    proc = subprocess.run(
        [sys.executable, "-m", "chpdispatch.cli", "synth", "--out", out,
         "--seed", "11"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert os.path.exists(os.path.join(out, "load.csv"))
