"""Market data handling, the bundled desk portfolio, and run configuration.

Covers CSV time-series import with strict hourly-continuity checks, load
rescaling against portfolio capacity, week selection, a deterministic
synthetic year generator, and the YAML run-configuration document used by the
command line interface.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta

import numpy as np
import yaml

from .errors import (
    ConfigError,
    GapError,
    InvalidSpec,
    NoPeaker,
    ParseError,
    Unachievable,
)
from .system import MarketSeries, StorageSpec, SystemInstance, UnitKind, UnitSpec

HOUR = timedelta(hours=1)
PRICE_COLUMNS = ("timestamp", "eur_per_mwh")
LOAD_COLUMNS = ("timestamp", "mwh")


# -- bundled desk portfolio -----------------------------------------------

def desk_units() -> tuple[UnitSpec, ...]:
    """The three-unit reference portfolio.

    An extraction unit and a back-pressure unit provide the base heat supply;
    a fuel-expensive heat-only peaker covers residual demand.  The
    back-pressure unit cannot leave its initial commitment within a day
    because its minimum fuel exceeds its ramp limit, and only the extraction
    unit and the peaker may be redispatched in real time.
    """
    extraction = UnitSpec(
        name="EXT", kind=UnitKind.EXTRACTION, r_b=0.64, phi_p=2.40, phi_q=0.31,
        f_min=120.0, f_max=631.20, r_up=150.0, r_dn=150.0,
        q_min=0.0, q_max=331.0, p_min=41.56, p_max=263.0,
        c_fuel=24.16, c_onl=0.0, c_su=7382.55, c_sd=7382.55,
        t_up=2, t_dn=2, v_init=1, f_init=300.0, flexible=True)
    back_pressure = UnitSpec(
        name="BP", kind=UnitKind.BACK_PRESSURE, r_b=0.28, phi_p=2.40, phi_q=0.36,
        f_min=72.24, f_max=516.0, r_up=50.0, r_dn=50.0,
        q_min=70.0, q_max=500.0, p_min=19.60, p_max=140.0,
        c_fuel=12.75, c_onl=0.0, c_su=6040.27, c_sd=6040.27,
        t_up=5, t_dn=5, v_init=1, f_init=420.0, flexible=False)
    peaker = UnitSpec(
        name="HOB", kind=UnitKind.HEAT_ONLY, phi_q=1.09,
        f_min=0.0, f_max=1086.96, r_up=1086.96, r_dn=1086.96,
        q_min=0.0, q_max=1000.0, p_min=0.0, p_max=0.0,
        c_fuel=93.96, c_onl=2684.56, c_su=0.0, c_sd=0.0,
        t_up=0, t_dn=0, v_init=0, f_init=0.0, flexible=True)
    return (extraction, back_pressure, peaker)


def desk_storage(tight: bool = False) -> StorageSpec:
    """Reference heat storage; the tight variant is a small buffer tank."""
    if tight:
        return StorageSpec(name="TANK", s_max=400.0, u_min=-100.0, u_max=100.0,
                           s_init=200.0)
    return StorageSpec(name="TANK", s_max=2000.0, u_min=-300.0, u_max=300.0,
                       s_init=1000.0)


_SPRING_DEMAND = (
    310.0, 300.0, 300.0, 310.0, 330.0, 370.0, 420.0, 460.0, 480.0, 470.0,
    450.0, 430.0, 410.0, 395.0, 385.0, 380.0, 385.0, 400.0, 430.0, 450.0,
    440.0, 410.0, 370.0, 335.0)
_SPRING_PRICE = (
    41.0, 39.5, 38.0, 38.5, 40.0, 44.0, 50.0, 56.0, 59.5, 60.5,
    60.0, 58.9, 55.0, 52.0, 50.5, 50.0, 51.5, 54.0, 57.0, 56.5,
    53.0, 48.0, 45.0, 42.5)
_WINTER_DEMAND = (
    828.0, 826.0, 825.0, 827.0, 830.0, 831.0, 850.0, 880.0, 910.0, 930.0,
    945.0, 955.0, 960.0, 958.0, 950.0, 940.0, 930.0, 935.0, 945.0, 950.0,
    935.0, 900.0, 862.0, 838.0)
_WINTER_PRICE = (
    28.6, 27.6, 26.7, 27.0, 28.0, 30.6, 35.1, 40.3, 44.2, 42.9,
    40.6, 39.0, 38.0, 37.1, 36.7, 37.4, 39.0, 43.2, 46.2, 44.9,
    41.0, 36.4, 32.5, 29.9)


def desk_instance(day: str = "spring") -> SystemInstance:
    """Bundled one-day instances.

    "spring" pairs the portfolio with a mild day fully coverable by the
    back-pressure unit and the large storage; "winter" is a tight day whose
    demand exceeds the combined CHP heat capacity for most hours, paired with
    a small buffer tank so real-time flexibility is scarce.
    """
    if day == "spring":
        market = MarketSeries(price=_SPRING_PRICE, demand=_SPRING_DEMAND)
        return SystemInstance(units=desk_units(), storages=(desk_storage(),),
                              market=market)
    if day == "winter":
        market = MarketSeries(price=_WINTER_PRICE, demand=_WINTER_DEMAND)
        return SystemInstance(units=desk_units(), storages=(desk_storage(tight=True),),
                              market=market)
    raise ConfigError(f"unknown desk day {day!r}; expected 'spring' or 'winter'")


# -- time series I/O ------------------------------------------------------

@dataclass
class RawSeries:
    """An hourly time series with its timestamps."""

    timestamps: list
    values: np.ndarray

    def __len__(self):
        return len(self.timestamps)


def load_series(path: str, time_col: str, value_col: str) -> RawSeries:
    """Read an hourly CSV series and enforce the schema.

    Args:
        path: CSV file with a header row.
        time_col: name of the ISO-8601 timestamp column.
        value_col: name of the numeric column.

    Returns:
        RawSeries in file order.

    Raises:
        ParseError: malformed header, timestamp, value or duplicate rows.
        GapError: non-hourly stepping between consecutive rows.
    """
    timestamps: list[datetime] = []
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if time_col not in header or value_col not in header:
            raise ParseError(
                f"header {header} lacks required columns {time_col!r}, {value_col!r}",
                line=1)
        ti, vi = header.index(time_col), header.index(value_col)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                ts = datetime.fromisoformat(row[ti].strip())
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad timestamp {row[ti]!r}", line=lineno) from exc
            try:
                val = float(row[vi])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad value in column {value_col!r}", line=lineno) from exc
            if not np.isfinite(val):
                raise ParseError(f"non-finite value {val}", line=lineno)
            if timestamps:
                step = ts - timestamps[-1]
                if step == timedelta(0):
                    raise ParseError(f"duplicate timestamp {ts.isoformat()}", line=lineno)
                if step != HOUR:
                    raise GapError(
                        f"gap between {timestamps[-1].isoformat()} and {ts.isoformat()}:"
                        f" expected 1 hour, got {step}")
            timestamps.append(ts)
            values.append(val)
    if not timestamps:
        raise ParseError("no data rows", line=2)
    return RawSeries(timestamps=timestamps, values=np.asarray(values, dtype=float))


def write_series(path: str, series: RawSeries, time_col: str, value_col: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([time_col, value_col])
        for ts, val in zip(series.timestamps, series.values):
            writer.writerow([ts.isoformat(), repr(float(val))])


def align_market(prices: RawSeries, load: RawSeries) -> MarketSeries:
    """Join price and load series that must share identical timestamps."""
    if len(prices) != len(load) or prices.timestamps != load.timestamps:
        raise GapError("price and load series do not cover identical hours")
    return MarketSeries(price=tuple(prices.values), demand=tuple(load.values))


def select_week(series: RawSeries, index: int) -> RawSeries:
    """Slice one 168-hour week, 1-based from the dataset start."""
    if index < 1:
        raise ConfigError(f"week index must be >= 1, got {index}")
    start = (index - 1) * 168
    stop = start + 168
    if stop > len(series):
        raise ConfigError(
            f"week {index} needs hours [{start}, {stop}) but series has {len(series)}")
    return RawSeries(timestamps=series.timestamps[start:stop],
                     values=series.values[start:stop].copy())


def select_day(series: RawSeries, index: int) -> RawSeries:
    """Slice one 24-hour day, 1-based from the dataset start."""
    if index < 1:
        raise ConfigError(f"day index must be >= 1, got {index}")
    start = (index - 1) * 24
    stop = start + 24
    if stop > len(series):
        raise ConfigError(
            f"day {index} needs hours [{start}, {stop}) but series has {len(series)}")
    return RawSeries(timestamps=series.timestamps[start:stop],
                     values=series.values[start:stop].copy())


# -- load rescaling against portfolio capacity ----------------------------

def _merit_order_peaker_share(load: np.ndarray, chp_capacity: float) -> float:
    """Greedy coverage proxy: CHP capacity first, peaker takes the residual."""
    residual = np.maximum(0.0, load - chp_capacity)
    return float(residual.sum() / load.sum())


def rescale_load(load: np.ndarray, units, peaker_share: float = 0.005,
                 tol: float = 1e-4, scale_lo: float = 0.1,
                 scale_hi: float = 10.0) -> tuple[float, np.ndarray]:
    """Scale a load path so the peaker serves a target energy share.

    Under a merit-order proxy the combined CHP heat capacity covers each hour
    first and heat-only peakers take the residual.  Bisection finds the scale
    at which the residual's energy share hits peaker_share within tol.

    Args:
        load: hourly load values, all positive.
        units: portfolio units; at least one must be heat-only.
        peaker_share: target share of annual energy served by peakers.
        tol: acceptance band around the target share (absolute).
        scale_lo, scale_hi: bisection bracket for the scale factor.

    Returns:
        (scale, scaled load array).

    Raises:
        NoPeaker: the portfolio has no heat-only unit.
        Unachievable: no scale inside the bracket attains the target share.
    """
    load = np.asarray(load, dtype=float)
    if load.min() <= 0:
        raise InvalidSpec("load values must be positive for rescaling")
    if not any(u.kind is UnitKind.HEAT_ONLY for u in units):
        raise NoPeaker("rescaling targets a peaker share but no heat-only unit exists")
    chp = sum(SystemInstance.effective_q_max(u) for u in units
              if u.kind is not UnitKind.HEAT_ONLY)

    def share(scale: float) -> float:
        return _merit_order_peaker_share(scale * load, chp)

    lo, hi = float(scale_lo), float(scale_hi)
    s_lo, s_hi = share(lo), share(hi)
    if s_lo > peaker_share + tol or s_hi < peaker_share - tol:
        raise Unachievable(
            f"share range [{s_lo:.6f}, {s_hi:.6f}] at scales [{lo}, {hi}] "
            f"cannot reach target {peaker_share}")
    # share(scale) is nondecreasing in scale
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s_mid = share(mid)
        if abs(s_mid - peaker_share) <= tol:
            return mid, mid * load
        if s_mid < peaker_share:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(share(mid) - peaker_share) <= tol:
        return mid, mid * load
    raise Unachievable("bisection did not converge to the target share")


# -- synthetic year -------------------------------------------------------

_DAILY_LOAD = np.array([
    0.88, 0.85, 0.84, 0.85, 0.88, 0.94, 1.03, 1.10, 1.12, 1.08, 1.04, 1.01,
    0.99, 0.97, 0.96, 0.97, 1.00, 1.05, 1.10, 1.12, 1.08, 1.02, 0.96, 0.91])
_DAILY_PRICE = np.array([
    30.5, 29.0, 28.0, 28.5, 30.0, 33.5, 39.0, 46.0, 52.0, 54.0, 51.0, 48.0,
    45.5, 44.0, 43.0, 43.5, 45.0, 48.5, 53.0, 55.0, 52.0, 46.0, 40.0, 34.0])
SYNTH_START = datetime(2025, 7, 1, 0, 0)
_PEAK_DAY = 206  # days after the dataset start; inside the 30th week


def synth_year(seed: int, base_load: float = 560.0, season_amp: float = 0.42,
               snap_amp: float = 0.16, load_noise: float = 0.025,
               price_noise: float = 0.08) -> tuple[RawSeries, RawSeries]:
    """Generate one deterministic synthetic year of hourly load and price.

    The year starts July 1, peaks in winter, and carries a cold snap centred
    in the 30th week so that week contains the global hourly load maximum.

    Args:
        seed: RNG seed; equal seeds give identical series.
        base_load: annual mean scale of the load in MWh/h.
        season_amp: relative amplitude of the seasonal swing.
        snap_amp: relative amplitude of the mid-winter cold snap.
        load_noise: relative standard deviation of hourly load noise.
        price_noise: relative standard deviation of hourly price noise.

    Returns:
        (load series, price series), both 8760 hours.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(8760)
    day = hours / 24.0
    hod = hours % 24
    season = np.cos(2.0 * np.pi * (day - _PEAK_DAY) / 365.0)
    snap = np.exp(-(((day - (_PEAK_DAY + 0.5)) / 1.8) ** 2))
    shape = (1.0 + season_amp * season + snap_amp * snap) * _DAILY_LOAD[hod]
    load = base_load * shape * (1.0 + load_noise * rng.standard_normal(8760))
    load = np.maximum(load, 0.05 * base_load)
    price = (_DAILY_PRICE[hod] * (1.0 + 0.12 * season)
             * (1.0 + price_noise * rng.standard_normal(8760)))
    price = np.maximum(price, 1.0)
    stamps = [SYNTH_START + h * HOUR for h in range(8760)]
    return (RawSeries(timestamps=stamps, values=load),
            RawSeries(timestamps=list(stamps), values=price))


# -- instance documents ---------------------------------------------------

_UNIT_FIELDS = ("name", "kind", "flexible", "r_b", "phi_p", "phi_q", "f_min",
                "f_max", "r_up", "r_dn", "q_min", "q_max", "p_min", "p_max",
                "c_fuel", "c_onl", "c_su", "c_sd", "t_up", "t_dn", "v_init",
                "f_init", "t_up0", "t_dn0")
_STORAGE_FIELDS = ("name", "s_min", "s_max", "u_min", "u_max", "s_init")


def instance_to_dict(instance: SystemInstance) -> dict:
    units = []
    for u in instance.units:
        row = {f: getattr(u, f) for f in _UNIT_FIELDS}
        row["kind"] = u.kind.value
        units.append(row)
    storages = [{f: getattr(s, f) for f in _STORAGE_FIELDS} for s in instance.storages]
    return {"units": units, "storages": storages,
            "market": {"price": list(instance.market.price),
                       "demand": list(instance.market.demand)}}


def instance_from_dict(doc: dict) -> SystemInstance:
    try:
        units = []
        for row in doc["units"]:
            row = dict(row)
            row["kind"] = UnitKind(row["kind"])
            units.append(UnitSpec(**row))
        storages = [StorageSpec(**row) for row in doc.get("storages", [])]
        market = MarketSeries(price=tuple(doc["market"]["price"]),
                              demand=tuple(doc["market"]["demand"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed instance document: {exc}") from exc
    return SystemInstance(units=tuple(units), storages=tuple(storages), market=market)


def load_instance(path: str) -> SystemInstance:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} does not hold a mapping document")
    return instance_from_dict(doc)


def save_instance(instance: SystemInstance, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(instance_to_dict(instance), fh, sort_keys=False)


# -- run configuration ----------------------------------------------------

@dataclass
class RunConfig:
    """One experiment: instance, uncertainty description, methods, solver.

    instance is either a path to an instance YAML or one of the bundled names
    "desk:spring" / "desk:winter".  radius_mults are multiples of the hourly
    demand standard deviation; gammas are uncertainty budgets.
    """

    instance: str = "desk:spring"
    prices_csv: str | None = None
    load_csv: str | None = None
    week: int | None = None
    day: int | None = None
    demand_rmse: float = 0.07
    price_rmse: float = 0.33
    correlation: float = 0.3
    radius_mults: list = field(default_factory=lambda: [3.2])
    gammas: list = field(default_factory=lambda: [6])
    rules: list = field(default_factory=lambda: ["ldr", "pldr"])
    methods: list = field(default_factory=lambda: ["det", "ro_ldr", "ro_pldr", "sp"])
    n_sample: int = 2000
    n_reduced: int = 100
    n_eval: int = 100
    seed: int = 1234
    eval_seed_offset: int = 10000
    shed_penalty: float = 10000.0
    backend: str = "highs"
    mip_rel_gap: float = 1e-6
    time_limit: float | None = None
    jobs: int = 1
    out_dir: str = "runs"

    def __post_init__(self):
        if self.demand_rmse < 0 or self.price_rmse < 0:
            raise ConfigError("relative errors must be nonnegative")
        if not -1.0 <= self.correlation <= 1.0:
            raise ConfigError(f"correlation {self.correlation} outside [-1, 1]")
        if any(g < 0 for g in self.gammas):
            raise ConfigError("gamma values must be nonnegative")
        if any(r < 0 for r in self.radius_mults):
            raise ConfigError("radius multipliers must be nonnegative")
        for rule in self.rules:
            if rule not in ("ldr", "pldr"):
                raise ConfigError(f"unknown decision rule {rule!r}")
        for method in self.methods:
            if method not in ("det", "ro_ldr", "ro_pldr", "sp"):
                raise ConfigError(f"unknown method {method!r}")
        if min(self.n_sample, self.n_reduced, self.n_eval) < 1:
            raise ConfigError("scenario counts must be positive")
        if self.n_reduced > self.n_sample:
            raise ConfigError("n_reduced cannot exceed n_sample")
        if self.shed_penalty <= 0:
            raise ConfigError("shed penalty must be positive")
        if self.week is not None and self.day is not None:
            raise ConfigError("give at most one of week/day selection")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} does not hold a mapping document")
    return RunConfig.from_dict(doc)


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def resolve_instance(config: RunConfig) -> SystemInstance:
    """Build the SystemInstance a configuration refers to."""
    if config.instance.startswith("desk:"):
        base = desk_instance(config.instance.split(":", 1)[1])
    else:
        base = load_instance(config.instance)
    if config.prices_csv or config.load_csv:
        if not (config.prices_csv and config.load_csv):
            raise ConfigError("prices_csv and load_csv must be given together")
        prices = load_series(config.prices_csv, *PRICE_COLUMNS)
        load = load_series(config.load_csv, *LOAD_COLUMNS)
        if config.week is not None:
            prices, load = select_week(prices, config.week), select_week(load, config.week)
        elif config.day is not None:
            prices, load = select_day(prices, config.day), select_day(load, config.day)
        market = align_market(prices, load)
        base = SystemInstance(units=base.units, storages=base.storages, market=market)
    return base
