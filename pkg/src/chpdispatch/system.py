"""Portfolio data model and the deterministic day-ahead unit-commitment MILP.

Units sell power at the day-ahead price and must jointly cover a known hourly
heat demand together with heat storages.  The deterministic model commits and
dispatches against the nominal demand and price paths; the robust and
stochastic modules build on the same portfolio types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import HorizonMismatch, InfeasibleData, InvalidSpec, SolverError
from .milp import INF, MILPModel, SolveResult


class UnitKind(Enum):
    BACK_PRESSURE = "back_pressure"
    EXTRACTION = "extraction"
    HEAT_ONLY = "heat_only"


@dataclass(frozen=True)
class UnitSpec:
    """One generation unit.

    Power and heat are coupled by the back-pressure ratio r_b: equality for
    back-pressure units, lower bound for extraction units, absent for
    heat-only units.  Fuel is phi_p * p + phi_q * q and is what the ramp
    limits act on.  All *_min/*_max operating bounds apply while the unit is
    on; an off unit produces nothing and burns nothing.

    Attributes:
        name: unique identifier.
        kind: unit family.
        r_b: power-to-heat ratio of the back-pressure line.
        phi_p: fuel per unit of power.
        phi_q: fuel per unit of heat.
        f_min, f_max: fuel bounds while on.
        r_up, r_dn: upward / downward fuel ramp limits per period.
        q_min, q_max: heat bounds while on.
        p_min, p_max: power bounds while on.
        c_fuel: marginal fuel cost.
        c_onl: fixed cost per online period.
        c_su, c_sd: start-up and shut-down costs.
        t_up, t_dn: minimum up and down times in periods.
        v_init: commitment state before period 1.
        f_init: fuel consumption before period 1.
        t_up0, t_dn0: periods the unit must still stay on / off at the start.
        flexible: whether real-time redispatch of this unit is allowed.
    """

    name: str
    kind: UnitKind
    r_b: float = 0.0
    phi_p: float = 0.0
    phi_q: float = 0.0
    f_min: float = 0.0
    f_max: float = 0.0
    r_up: float = 0.0
    r_dn: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    p_min: float = 0.0
    p_max: float = 0.0
    c_fuel: float = 0.0
    c_onl: float = 0.0
    c_su: float = 0.0
    c_sd: float = 0.0
    t_up: int = 0
    t_dn: int = 0
    v_init: int = 0
    f_init: float = 0.0
    t_up0: int = 0
    t_dn0: int = 0
    flexible: bool = False

    def __post_init__(self):
        if not self.name:
            raise InvalidSpec("unit name must be non-empty")
        pairs = [("f", self.f_min, self.f_max), ("q", self.q_min, self.q_max),
                 ("p", self.p_min, self.p_max)]
        for label, lo, hi in pairs:
            if lo < 0 or hi < lo:
                raise InvalidSpec(f"unit {self.name}: {label} bounds [{lo}, {hi}] invalid")
        if self.r_up < 0 or self.r_dn < 0:
            raise InvalidSpec(f"unit {self.name}: ramp limits must be nonnegative")
        if min(self.t_up, self.t_dn, self.t_up0, self.t_dn0) < 0:
            raise InvalidSpec(f"unit {self.name}: time counters must be nonnegative")
        if self.v_init not in (0, 1):
            raise InvalidSpec(f"unit {self.name}: v_init must be 0 or 1")
        if self.t_up0 > 0 and self.v_init == 0:
            raise InvalidSpec(f"unit {self.name}: residual up-time requires v_init = 1")
        if self.t_dn0 > 0 and self.v_init == 1:
            raise InvalidSpec(f"unit {self.name}: residual down-time requires v_init = 0")
        if self.kind in (UnitKind.BACK_PRESSURE, UnitKind.EXTRACTION):
            if self.r_b <= 0:
                raise InvalidSpec(f"unit {self.name}: {self.kind.value} needs r_b > 0")
            if self.phi_p <= 0:
                raise InvalidSpec(f"unit {self.name}: {self.kind.value} needs phi_p > 0")
        if self.kind is UnitKind.HEAT_ONLY:
            if self.p_max != 0 or self.phi_p != 0:
                raise InvalidSpec(f"unit {self.name}: heat-only units produce no power")
        if self.phi_q < 0:
            raise InvalidSpec(f"unit {self.name}: phi_q must be nonnegative")

    @property
    def r_v(self) -> float:
        """Slope of the extraction unit's iso-fuel line in the (q, p) plane."""
        if self.kind is not UnitKind.EXTRACTION:
            raise InvalidSpec(f"unit {self.name}: r_v is defined for extraction units only")
        return -self.phi_q / self.phi_p

    def fuel(self, p, q):
        return self.phi_p * p + self.phi_q * q


@dataclass(frozen=True)
class StorageSpec:
    """One heat storage.

    Flow u is positive when charging (heat taken out of the network) and
    negative when discharging.  Content follows s_t = s_{t-1} + u_t and must
    return to s_init at the end of the horizon.
    """

    name: str
    s_max: float
    u_min: float
    u_max: float
    s_init: float
    s_min: float = 0.0

    def __post_init__(self):
        if not self.name:
            raise InvalidSpec("storage name must be non-empty")
        if not (self.s_min <= self.s_init <= self.s_max):
            raise InvalidSpec(f"storage {self.name}: s_init outside [{self.s_min}, {self.s_max}]")
        if not (self.u_min <= 0.0 <= self.u_max):
            raise InvalidSpec(f"storage {self.name}: flow bounds must straddle zero")


@dataclass(frozen=True)
class MarketSeries:
    """Hourly day-ahead price and heat demand paths of equal length."""

    price: tuple
    demand: tuple

    def __post_init__(self):
        price = tuple(float(x) for x in self.price)
        demand = tuple(float(x) for x in self.demand)
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "demand", demand)
        if len(price) != len(demand):
            raise HorizonMismatch(
                f"price has {len(price)} periods, demand has {len(demand)}")
        if len(price) == 0:
            raise HorizonMismatch("market series must cover at least one period")
        arr = np.array(price + demand)
        if not np.isfinite(arr).all():
            raise InvalidSpec("market series contain non-finite values")
        if min(demand) < 0:
            raise InvalidSpec("heat demand must be nonnegative")

    @property
    def horizon(self) -> int:
        return len(self.price)

    def price_array(self) -> np.ndarray:
        return np.asarray(self.price, dtype=float)

    def demand_array(self) -> np.ndarray:
        return np.asarray(self.demand, dtype=float)


@dataclass(frozen=True)
class SystemInstance:
    """A portfolio of units and storages facing one market day."""

    units: tuple
    storages: tuple
    market: MarketSeries

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "storages", tuple(self.storages))
        names = [u.name for u in self.units] + [s.name for s in self.storages]
        if len(set(names)) != len(names):
            raise InvalidSpec("unit and storage names must be unique")
        if not self.units:
            raise InvalidSpec("instance needs at least one unit")
        peak = max(self.market.demand)
        capacity = sum(self.effective_q_max(u) for u in self.units)
        capacity += sum(-s.u_min for s in self.storages)
        if peak > capacity + 1e-9:
            raise InfeasibleData(
                f"peak demand {peak} exceeds deliverable heat capacity {capacity}")

    @staticmethod
    def effective_q_max(unit: UnitSpec) -> float:
        """Heat ceiling implied jointly by the heat and fuel bounds."""
        if unit.kind is UnitKind.HEAT_ONLY and unit.phi_q > 0:
            return min(unit.q_max, unit.f_max / unit.phi_q)
        return unit.q_max

    @property
    def horizon(self) -> int:
        return self.market.horizon

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_storages(self) -> int:
        return len(self.storages)

    def unit(self, name: str) -> UnitSpec:
        for u in self.units:
            if u.name == name:
                return u
        raise KeyError(name)


@dataclass
class ScheduleSolution:
    """Day-ahead commitment and dispatch for every unit and storage."""

    v: np.ndarray  # (n_units, T) on/off
    y: np.ndarray  # (n_units, T) start-up
    z: np.ndarray  # (n_units, T) shut-down
    p: np.ndarray  # (n_units, T) power
    q: np.ndarray  # (n_units, T) heat
    f: np.ndarray  # (n_units, T) fuel
    u: np.ndarray  # (n_storages, T) storage flow
    s: np.ndarray  # (n_storages, T) storage content
    objective: float = 0.0

    def copy(self) -> "ScheduleSolution":
        return ScheduleSolution(
            v=self.v.copy(), y=self.y.copy(), z=self.z.copy(), p=self.p.copy(),
            q=self.q.copy(), f=self.f.copy(), u=self.u.copy(), s=self.s.copy(),
            objective=self.objective)

    def periods_online(self) -> np.ndarray:
        return self.v.astype(int).sum(axis=1)


def _up_window(t: int, t_up: int, horizon: int) -> int:
    return min(t + t_up - 1, horizon)


def build_deterministic_milp(instance: SystemInstance) -> MILPModel:
    """Build the deterministic unit-commitment MILP.

    Maximizes day-ahead power revenue minus fuel, online, start-up and
    shut-down costs subject to commitment logic, minimum up/down times,
    operating bounds, fuel ramp limits, storage dynamics and the hourly heat
    balance against nominal demand.

    Returns:
        A MILPModel whose column names follow the block[name,period] scheme
        consumed by extract_schedule.
    """
    T = instance.horizon
    lam = instance.market.price_array()
    d = instance.market.demand_array()
    m = MILPModel("deterministic_uc", sense="max")

    col = {}
    for unit in instance.units:
        for t in range(1, T + 1):
            col[("v", unit.name, t)] = m.add_col(
                f"v[{unit.name},{t}]", lb=0.0, ub=1.0, integer=True, obj=-unit.c_onl)
            col[("y", unit.name, t)] = m.add_col(
                f"y[{unit.name},{t}]", lb=0.0, ub=1.0, integer=True, obj=-unit.c_su)
            col[("z", unit.name, t)] = m.add_col(
                f"z[{unit.name},{t}]", lb=0.0, ub=1.0, integer=True, obj=-unit.c_sd)
            p_ub = 0.0 if unit.kind is UnitKind.HEAT_ONLY else unit.p_max
            col[("p", unit.name, t)] = m.add_col(
                f"p[{unit.name},{t}]", lb=0.0, ub=p_ub, obj=lam[t - 1])
            col[("q", unit.name, t)] = m.add_col(
                f"q[{unit.name},{t}]", lb=0.0, ub=unit.q_max)
            col[("f", unit.name, t)] = m.add_col(
                f"f[{unit.name},{t}]", lb=0.0, ub=unit.f_max, obj=-unit.c_fuel)
    for st in instance.storages:
        for t in range(1, T + 1):
            col[("u", st.name, t)] = m.add_col(
                f"u[{st.name},{t}]", lb=st.u_min, ub=st.u_max)
            col[("s", st.name, t)] = m.add_col(
                f"s[{st.name},{t}]", lb=st.s_min, ub=st.s_max)

    for unit in instance.units:
        k = unit.name
        for t in range(1, T + 1):
            v, y, z = col[("v", k, t)], col[("y", k, t)], col[("z", k, t)]
            p, q, f = col[("p", k, t)], col[("q", k, t)], col[("f", k, t)]
            # commitment logic and exclusivity
            prev = [(col[("v", k, t - 1)], -1.0)] if t > 1 else []
            m.add_row(f"logic[{k},{t}]", "E", float(unit.v_init) if t == 1 else 0.0,
                      [(v, 1.0), (y, -1.0), (z, 1.0)] + prev)
            m.add_row(f"startstop[{k},{t}]", "L", 1.0, [(y, 1.0), (z, 1.0)])
            # minimum up and down time windows
            if unit.t_up > 1:
                tf = _up_window(t, unit.t_up, T)
                coeffs = [(col[("v", k, tau)], 1.0) for tau in range(t, tf + 1)]
                m.add_row(f"min_up[{k},{t}]", "G", 0.0,
                          coeffs + [(y, -float(tf - t + 1))])
            if unit.t_dn > 1:
                # sum of (1 - v) over the window must cover the shutdown
                tf = _up_window(t, unit.t_dn, T)
                coeffs = [(col[("v", k, tau)], -1.0) for tau in range(t, tf + 1)]
                m.add_row(f"min_dn[{k},{t}]", "G", -float(tf - t + 1),
                          coeffs + [(z, -float(tf - t + 1))])
            # production coupling
            if unit.kind is UnitKind.BACK_PRESSURE:
                m.add_row(f"ratio[{k},{t}]", "E", 0.0, [(p, 1.0), (q, -unit.r_b)])
            elif unit.kind is UnitKind.EXTRACTION:
                m.add_row(f"ratio[{k},{t}]", "G", 0.0, [(p, 1.0), (q, -unit.r_b)])
            # operating bounds tied to commitment
            m.add_row(f"heat_ub[{k},{t}]", "G", 0.0, [(v, unit.q_max), (q, -1.0)])
            m.add_row(f"heat_lb[{k},{t}]", "G", 0.0, [(q, 1.0), (v, -unit.q_min)])
            if unit.kind is not UnitKind.HEAT_ONLY:
                m.add_row(f"power_ub[{k},{t}]", "G", 0.0, [(v, unit.p_max), (p, -1.0)])
                m.add_row(f"power_lb[{k},{t}]", "G", 0.0, [(p, 1.0), (v, -unit.p_min)])
            # fuel definition, bounds and ramp
            m.add_row(f"fuel_def[{k},{t}]", "E", 0.0,
                      [(f, 1.0), (p, -unit.phi_p), (q, -unit.phi_q)])
            m.add_row(f"fuel_ub[{k},{t}]", "G", 0.0, [(v, unit.f_max), (f, -1.0)])
            m.add_row(f"fuel_lb[{k},{t}]", "G", 0.0, [(f, 1.0), (v, -unit.f_min)])
            prev_f = [(col[("f", k, t - 1)], 1.0)] if t > 1 else []
            base = unit.f_init if t == 1 else 0.0
            m.add_row(f"ramp_up[{k},{t}]", "L", unit.r_up + base,
                      [(f, 1.0)] + [(c, -v_) for c, v_ in prev_f])
            m.add_row(f"ramp_dn[{k},{t}]", "G", -unit.r_dn + base,
                      [(f, 1.0)] + [(c, -v_) for c, v_ in prev_f])
        # residual initial must-on / must-off periods
        if unit.t_up0 > 0:
            w = min(unit.t_up0, T)
            m.add_row(f"init_up[{k}]", "E", float(w),
                      [(col[("v", k, t)], 1.0) for t in range(1, w + 1)])
        if unit.t_dn0 > 0:
            w = min(unit.t_dn0, T)
            m.add_row(f"init_dn[{k}]", "E", 0.0,
                      [(col[("v", k, t)], 1.0) for t in range(1, w + 1)])

    for st in instance.storages:
        i = st.name
        for t in range(1, T + 1):
            coeffs = [(col[("s", i, t)], 1.0), (col[("u", i, t)], -1.0)]
            if t > 1:
                coeffs.append((col[("s", i, t - 1)], -1.0))
            m.add_row(f"content[{i},{t}]", "E", st.s_init if t == 1 else 0.0, coeffs)
        m.add_row(f"terminal[{i}]", "E", st.s_init, [(col[("s", i, T)], 1.0)])

    for t in range(1, T + 1):
        coeffs = [(col[("q", u.name, t)], 1.0) for u in instance.units]
        coeffs += [(col[("u", s.name, t)], -1.0) for s in instance.storages]
        m.add_row(f"balance[{t}]", "E", d[t - 1], coeffs)

    m.canonicalize()
    return m


def extract_schedule(instance: SystemInstance, result: SolveResult) -> ScheduleSolution:
    """Read a solved deterministic model back into a ScheduleSolution."""
    if not result.ok or result.values is None:
        raise SolverError(f"cannot extract schedule from status {result.status!r}")
    T = instance.horizon
    nu, ns = instance.n_units, instance.n_storages
    sol = ScheduleSolution(
        v=np.zeros((nu, T), dtype=int), y=np.zeros((nu, T), dtype=int),
        z=np.zeros((nu, T), dtype=int), p=np.zeros((nu, T)), q=np.zeros((nu, T)),
        f=np.zeros((nu, T)), u=np.zeros((ns, T)), s=np.zeros((ns, T)),
        objective=float(result.objective))
    vals = result.values
    for ki, unit in enumerate(instance.units):
        for t in range(1, T + 1):
            for block in ("v", "y", "z"):
                raw = vals[f"{block}[{unit.name},{t}]"]
                if abs(raw - round(raw)) > 1e-5:
                    raise SolverError(
                        f"binary {block}[{unit.name},{t}] = {raw} is not integral")
                getattr(sol, block)[ki, t - 1] = int(round(raw))
            sol.p[ki, t - 1] = vals[f"p[{unit.name},{t}]"]
            sol.q[ki, t - 1] = vals[f"q[{unit.name},{t}]"]
            sol.f[ki, t - 1] = vals[f"f[{unit.name},{t}]"]
    for si, st in enumerate(instance.storages):
        for t in range(1, T + 1):
            sol.u[si, t - 1] = vals[f"u[{st.name},{t}]"]
            sol.s[si, t - 1] = vals[f"s[{st.name},{t}]"]
    return sol


def schedule_profit(instance: SystemInstance, sol: ScheduleSolution,
                    price: np.ndarray | None = None) -> float:
    """Recompute profit of a schedule from first principles.

    Args:
        instance: portfolio and market data.
        sol: schedule to price.
        price: optional alternative power price path (defaults to the
            instance's day-ahead prices).

    Returns:
        Power revenue minus fuel, online, start-up and shut-down costs.
    """
    lam = instance.market.price_array() if price is None else np.asarray(price, dtype=float)
    if lam.shape[0] != instance.horizon:
        raise HorizonMismatch("price path length differs from instance horizon")
    revenue = float((sol.p * lam[None, :]).sum())
    cost = 0.0
    for ki, unit in enumerate(instance.units):
        cost += unit.c_fuel * sol.f[ki].sum()
        cost += unit.c_onl * sol.v[ki].sum()
        cost += unit.c_su * sol.y[ki].sum()
        cost += unit.c_sd * sol.z[ki].sum()
    return revenue - cost


@dataclass
class Violation:
    family: str
    entity: str
    period: int
    residual: float

    def __str__(self):
        return f"{self.family}[{self.entity},{self.period}] residual {self.residual:.3e}"


@dataclass
class ViolationReport:
    """Constraint residuals of a schedule above tolerance, grouped by family."""

    records: list = field(default_factory=list)
    max_abs: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.records

    def by_family(self) -> dict:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.family] = out.get(r.family, 0) + 1
        return out

    def summary(self) -> str:
        if self.ok:
            return "all constraint families satisfied"
        fams = ", ".join(f"{k}: {v}" for k, v in sorted(self.by_family().items()))
        return f"worst residual {self.max_abs:.3e} ({fams})"


def validate_schedule(instance: SystemInstance, sol: ScheduleSolution,
                      tol: float = 1e-6,
                      demand: np.ndarray | None = None) -> ViolationReport:
    """Recompute every constraint family and report residuals above tol.

    Args:
        instance: portfolio and market data.
        sol: candidate schedule.
        tol: residuals at or below this magnitude are ignored.
        demand: optional realized demand path replacing the nominal one, so
            adjusted schedules can be audited against a realization.

    Returns:
        ViolationReport listing each violated (family, entity, period).
    """
    T = instance.horizon
    d = instance.market.demand_array() if demand is None else np.asarray(demand, dtype=float)
    if d.shape[0] != T:
        raise HorizonMismatch("demand path length differs from instance horizon")
    report = ViolationReport()

    def hit(family, entity, period, residual):
        residual = float(residual)
        if residual > tol:
            report.records.append(Violation(family, entity, period, residual))
            report.max_abs = max(report.max_abs, residual)

    for ki, unit in enumerate(instance.units):
        k = unit.name
        v, y, z = sol.v[ki], sol.y[ki], sol.z[ki]
        p, q, f = sol.p[ki], sol.q[ki], sol.f[ki]
        for t in range(1, T + 1):
            i = t - 1
            for blk, arr in (("v", v), ("y", y), ("z", z)):
                hit(f"integrality_{blk}", k, t, abs(arr[i] - round(arr[i])))
            vp = v[i - 1] if t > 1 else unit.v_init
            hit("logic", k, t, abs(v[i] - vp - y[i] + z[i]))
            hit("startstop", k, t, y[i] + z[i] - 1.0)
            if unit.t_up > 1:
                tf = _up_window(t, unit.t_up, T)
                hit("min_up", k, t, (tf - t + 1) * y[i] - v[i:tf].sum())
            if unit.t_dn > 1:
                tf = _up_window(t, unit.t_dn, T)
                offline = (tf - t + 1) - v[i:tf].sum()
                hit("min_dn", k, t, (tf - t + 1) * z[i] - offline)
            if unit.kind is UnitKind.BACK_PRESSURE:
                hit("ratio", k, t, abs(p[i] - unit.r_b * q[i]))
            elif unit.kind is UnitKind.EXTRACTION:
                hit("ratio", k, t, unit.r_b * q[i] - p[i])
            else:
                hit("power_zero", k, t, abs(p[i]))
            hit("heat_ub", k, t, q[i] - unit.q_max * v[i])
            hit("heat_lb", k, t, unit.q_min * v[i] - q[i])
            if unit.kind is not UnitKind.HEAT_ONLY:
                hit("power_ub", k, t, p[i] - unit.p_max * v[i])
                hit("power_lb", k, t, unit.p_min * v[i] - p[i])
            hit("fuel_def", k, t, abs(f[i] - unit.fuel(p[i], q[i])))
            hit("fuel_ub", k, t, f[i] - unit.f_max * v[i])
            hit("fuel_lb", k, t, unit.f_min * v[i] - f[i])
            fp = f[i - 1] if t > 1 else unit.f_init
            hit("ramp_up", k, t, (f[i] - fp) - unit.r_up)
            hit("ramp_dn", k, t, (fp - f[i]) - unit.r_dn)
        if unit.t_up0 > 0:
            w = min(unit.t_up0, T)
            hit("init_up", k, 1, abs(v[:w].sum() - w))
        if unit.t_dn0 > 0:
            w = min(unit.t_dn0, T)
            hit("init_dn", k, 1, abs(v[:w].sum()))

    for si, st in enumerate(instance.storages):
        u, s = sol.u[si], sol.s[si]
        for t in range(1, T + 1):
            i = t - 1
            sp = s[i - 1] if t > 1 else st.s_init
            hit("content_update", st.name, t, abs(s[i] - sp - u[i]))
            hit("content_ub", st.name, t, s[i] - st.s_max)
            hit("content_lb", st.name, t, st.s_min - s[i])
            hit("flow_ub", st.name, t, u[i] - st.u_max)
            hit("flow_lb", st.name, t, st.u_min - u[i])
        hit("terminal", st.name, T, abs(s[T - 1] - st.s_init))

    supply = sol.q.sum(axis=0) - (sol.u.sum(axis=0) if instance.n_storages else 0.0)
    for t in range(1, T + 1):
        hit("balance", "system", t, abs(supply[t - 1] - d[t - 1]))
    return report
