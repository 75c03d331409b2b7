"""Portfolio model tests: spec validation, deterministic MILP, schedule audit."""

import numpy as np
import pytest
from helpers import random_small_instance, solve_by_enumeration

from chpdispatch.data import desk_instance, desk_units
from chpdispatch.errors import HorizonMismatch, InfeasibleData, InvalidSpec
from chpdispatch.milp import SolverConfig, solve
from chpdispatch.system import (
    MarketSeries,
    ScheduleSolution,
    StorageSpec,
    SystemInstance,
    UnitKind,
    UnitSpec,
    build_deterministic_milp,
    extract_schedule,
    schedule_profit,
    validate_schedule,
)


def minimal_unit(**overrides):
    base = dict(name="U", kind=UnitKind.HEAT_ONLY, phi_q=1.0, f_min=0.0,
                f_max=50.0, r_up=50.0, r_dn=50.0, q_min=0.0, q_max=45.0,
                c_fuel=3.0, v_init=1, flexible=True)
    base.update(overrides)
    return UnitSpec(**base)


# -- spec validation -------------------------------------------------------


def test_back_pressure_line_consistency_at_capacity():
    bp = desk_units()[1]
    q = 500.0
    p = bp.r_b * q
    assert p == pytest.approx(140.0, abs=1e-12)
    assert bp.fuel(p, q) == pytest.approx(516.0, abs=1e-9)  # exactly f_max


def test_extraction_iso_fuel_slope_and_power_corner():
    ext = desk_units()[0]
    assert ext.r_v == pytest.approx(-0.31 / 2.40, abs=1e-12)
    # full condensing power consumes exactly f_max
    assert ext.phi_p * ext.p_max == pytest.approx(ext.f_max, abs=1e-9)


def test_invalid_unit_specs_rejected():
    with pytest.raises(InvalidSpec):
        minimal_unit(q_min=10.0, q_max=5.0)
    with pytest.raises(InvalidSpec):
        minimal_unit(kind=UnitKind.BACK_PRESSURE, r_b=0.0, phi_p=2.0)
    with pytest.raises(InvalidSpec):
        minimal_unit(p_max=5.0)  # heat-only units produce no power
    with pytest.raises(InvalidSpec):
        minimal_unit(v_init=0, t_up0=2)  # must-on counter without being on
    with pytest.raises(InvalidSpec):
        minimal_unit(r_up=-1.0)


def test_invalid_storage_rejected():
    with pytest.raises(InvalidSpec):
        StorageSpec(name="S", s_max=10.0, u_min=-2.0, u_max=2.0, s_init=11.0)
    with pytest.raises(InvalidSpec):
        StorageSpec(name="S", s_max=10.0, u_min=1.0, u_max=2.0, s_init=5.0)


def test_market_series_lengths_must_agree():
    with pytest.raises(HorizonMismatch):
        MarketSeries(price=(1.0, 2.0), demand=(3.0,))


def test_demand_above_capacity_is_rejected():
    unit = minimal_unit()
    with pytest.raises(InfeasibleData):
        SystemInstance(units=(unit,), storages=(),
                       market=MarketSeries(price=(10.0,), demand=(100.0,)))


def test_fuel_bound_caps_heat_only_output():
    # effective heat ceiling is f_max / phi_q when below q_max
    hob = desk_units()[2]
    eff = SystemInstance.effective_q_max(hob)
    assert eff == pytest.approx(1086.96 / 1.09, rel=1e-12)
    assert eff < hob.q_max


# -- deterministic MILP ----------------------------------------------------


def solve_deterministic(instance):
    res = solve(build_deterministic_milp(instance), SolverConfig(mip_rel_gap=1e-9))
    assert res.status == "optimal"
    return extract_schedule(instance, res)


def test_single_unit_single_hour_profit():
    # back-pressure at capacity for one hour: 50 * 140 - 12.75 * 516 = 421
    bp = desk_units()[1]
    bp = UnitSpec(**{**{f: getattr(bp, f) for f in bp.__dataclass_fields__},
                     "t_up": 0, "t_dn": 0, "f_init": 516.0})
    inst = SystemInstance(units=(bp,), storages=(),
                          market=MarketSeries(price=(50.0,), demand=(500.0,)))
    sol = solve_deterministic(inst)
    assert sol.objective == pytest.approx(50.0 * 140.0 - 12.75 * 516.0, abs=1e-6)
    assert sol.objective == pytest.approx(421.0, abs=1e-6)
    assert schedule_profit(inst, sol) == pytest.approx(421.0, abs=1e-6)


def test_matches_commitment_enumeration_oracle():
    # brute force over every on/off pattern with an LP dispatch per pattern
    rng = np.random.default_rng(42)
    for k in range(6):
        T = 3 if k % 2 == 0 else 4
        inst = random_small_instance(rng, T=T, n_extra_units=1)
        sol = solve_deterministic(inst)
        oracle = solve_by_enumeration(inst)
        assert oracle is not None
        assert sol.objective == pytest.approx(oracle, rel=1e-6, abs=1e-6)


def test_desk_days_solve_and_validate():
    for day in ("spring", "winter"):
        inst = desk_instance(day)
        sol = solve_deterministic(inst)
        report = validate_schedule(inst, sol, tol=1e-6)
        assert report.ok, report.summary()
        assert schedule_profit(inst, sol) == pytest.approx(sol.objective, rel=1e-9)


def test_ramp_locks_initially_burning_unit_online():
    # fuel cannot fall from f_init = 300 to zero at ramp 150: one hour forced on
    inst = desk_instance("spring")
    sol = solve_deterministic(inst)
    ext = list(inst.units).index(inst.unit("EXT"))
    assert sol.v[ext, 0] == 1
    assert sol.f[ext, 0] >= 150.0 - 1e-6


def test_back_pressure_cannot_change_commitment_within_day():
    # minimum fuel 72.24 exceeds ramp 50, so BP keeps its initial state
    inst = desk_instance("winter")
    sol = solve_deterministic(inst)
    bp = list(inst.units).index(inst.unit("BP"))
    assert sol.v[bp].min() == 1


def test_min_up_time_enforced():
    unit = minimal_unit(name="A", c_onl=1.0, t_up=3, t_dn=1, v_init=0)
    helper = minimal_unit(name="B", c_fuel=1.0)
    # demand spike makes A start; it must then stay on 3 periods
    market = MarketSeries(price=(0.0,) * 5, demand=(40.0, 80.0, 40.0, 40.0, 40.0))
    inst = SystemInstance(units=(unit, helper), storages=(), market=market)
    sol = solve_deterministic(inst)
    a = 0
    assert sol.v[a, 1] == 1  # needed for the spike
    starts = np.flatnonzero(sol.y[a])
    assert starts.size >= 1
    for s in starts:  # every start holds the unit on for t_up periods
        assert sol.v[a, s:s + 3].min() == 1
    report = validate_schedule(inst, sol)
    assert report.ok


def test_storage_shifts_heat_and_returns_to_initial_content():
    unit = minimal_unit(f_max=120.0, q_max=60.0, r_up=120.0, r_dn=120.0)
    store = StorageSpec(name="S", s_max=30.0, u_min=-10.0, u_max=10.0, s_init=15.0)
    market = MarketSeries(price=(10.0, 10.0, 10.0), demand=(30.0, 60.0, 30.0))
    inst = SystemInstance(units=(unit,), storages=(store,), market=market)
    sol = solve_deterministic(inst)
    assert sol.s[0, -1] == pytest.approx(15.0, abs=1e-7)
    assert validate_schedule(inst, sol).ok


def test_objective_monotone_in_price():
    rng = np.random.default_rng(3)
    inst = random_small_instance(rng, T=3)
    sol = solve_deterministic(inst)
    bumped = SystemInstance(
        units=inst.units, storages=inst.storages,
        market=MarketSeries(price=tuple(p + 5.0 for p in inst.market.price),
                            demand=inst.market.demand))
    sol2 = solve_deterministic(bumped)
    assert sol2.objective >= sol.objective - 1e-9


# -- schedule audit --------------------------------------------------------


def test_validator_flags_tampered_schedule():
    inst = desk_instance("spring")
    sol = solve_deterministic(inst)
    bad = sol.copy()
    bad.q[0, 5] += 3.0  # breaks balance and fuel definition
    report = validate_schedule(inst, bad, tol=1e-6)
    fams = report.by_family()
    assert "balance" in fams
    assert "fuel_def" in fams


def test_validator_flags_fractional_commitment():
    inst = desk_instance("spring")
    sol = solve_deterministic(inst)
    bad = sol.copy()
    bad.v = bad.v.astype(float)
    bad.v[2, 0] = 0.5
    report = validate_schedule(inst, bad, tol=1e-6)
    assert any(f.startswith("integrality") for f in report.by_family())


def test_validator_checks_realized_demand_path():
    inst = desk_instance("spring")
    sol = solve_deterministic(inst)
    shifted = inst.market.demand_array() + 1.0
    report = validate_schedule(inst, sol, tol=1e-6, demand=shifted)
    assert "balance" in report.by_family()
    assert len([r for r in report.records if r.family == "balance"]) == 24


def test_validator_accepts_exact_schedule_against_nominal_demand():
    inst = desk_instance("winter")
    sol = solve_deterministic(inst)
    assert validate_schedule(inst, sol, tol=1e-6,
                             demand=inst.market.demand_array()).ok


def test_profit_with_alternative_price_path():
    inst = desk_instance("spring")
    sol = solve_deterministic(inst)
    lam = inst.market.price_array()
    base = schedule_profit(inst, sol)
    shifted = schedule_profit(inst, sol, price=lam + 2.0)
    assert shifted - base == pytest.approx(2.0 * sol.p.sum(), rel=1e-9)
