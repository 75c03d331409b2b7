"""Scenario fans: containers, reduction, and the stochastic program over them.

A scenario set is a fan: equal-length deviation paths branching at the root,
each with a probability.  Reduction keeps a subset of paths and moves the
dropped probability mass to the nearest kept path, greedily minimizing the
transport cost at every step.  The fan feeds a two-stage stochastic program
with a shared day-ahead schedule and one recourse copy per scenario, and the
same machinery evaluates any fixed schedule out of sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (DimensionMismatch, InfeasibleFirstStage, InvalidSpec,
                     NotSolved, ParseError, TargetTooLarge)
from .milp import INF, MILPModel, SolveResult
from .robust import TwoStageProblem, assemble_two_stage
from .system import (ScheduleSolution, SystemInstance, build_deterministic_milp,
                     extract_schedule, schedule_profit, validate_schedule)
from .uncertainty import demand_price_uncertainty


@dataclass
class ScenarioSet:
    """Equal-horizon deviation paths with probabilities.

    Attributes:
        paths: (n, T, 2) array; channel 0 holds the heat-demand deviation,
            channel 1 the balancing-price deviation, both in physical units.
        probs: (n,) probability vector, nonnegative, summing to one.
    """

    paths: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=float)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.paths.ndim != 3 or self.paths.shape[2] != 2:
            raise DimensionMismatch(
                f"paths must be (n, T, 2), got {self.paths.shape}")
        if self.probs.shape != (self.paths.shape[0],):
            raise DimensionMismatch(
                f"probs has shape {self.probs.shape}, need ({self.paths.shape[0]},)")
        if self.probs.size and self.probs.min() < -1e-12:
            raise ValueError("probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def horizon(self) -> int:
        return self.paths.shape[1]

    @property
    def demand_dev(self) -> np.ndarray:
        return self.paths[:, :, 0]

    @property
    def price_dev(self) -> np.ndarray:
        return self.paths[:, :, 1]

    def subset(self, indices) -> "ScenarioSet":
        """Keep the given scenarios, renormalizing their probabilities."""
        indices = np.asarray(indices, dtype=int)
        probs = self.probs[indices]
        total = probs.sum()
        if total <= 0:
            raise ValueError("selected scenarios carry no probability mass")
        return ScenarioSet(paths=self.paths[indices].copy(), probs=probs / total)


def _standardized_flat(sset: ScenarioSet) -> np.ndarray:
    """Concatenated (demand, price) paths scaled by per-coordinate std."""
    flat = sset.paths.reshape(sset.n, -1)
    std = flat.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return flat / std


def fast_forward_reduce(full: ScenarioSet, target_n: int) -> ScenarioSet:
    """Greedy transport-cost scenario reduction.

    Starting from nothing, repeatedly adds the scenario whose selection
    minimizes the probability-weighted sum of distances from every scenario
    to its nearest selected one; distances are Euclidean over the
    concatenated (demand, price) path with each coordinate scaled by its
    standard deviation across the set.  After selecting target_n paths, the
    dropped probability mass moves to each path's nearest kept neighbor.
    Ties always resolve to the lowest original index; the kept scenarios are
    returned in original order.

    Raises:
        TargetTooLarge: target_n exceeds the set size.
    """
    if target_n < 1:
        raise ValueError(f"need at least one kept scenario, got {target_n}")
    if target_n > full.n:
        raise TargetTooLarge(
            f"cannot keep {target_n} of {full.n} scenarios")
    if target_n == full.n:
        return ScenarioSet(paths=full.paths.copy(), probs=full.probs.copy())
    X = _standardized_flat(full)
    D = cdist(X, X)
    p = full.probs
    avail = np.ones(full.n, dtype=bool)
    selected: list[int] = []
    c = None
    for _ in range(target_n):
        # expected distance to the selected set if the candidate joins it
        costs = D @ p if c is None else np.minimum(D, c[None, :]) @ p
        costs[~avail] = np.inf
        u = int(np.argmin(costs))
        selected.append(u)
        avail[u] = False
        c = D[u].copy() if c is None else np.minimum(c, D[u])
    kept = np.sort(np.asarray(selected, dtype=int))
    probs = np.zeros(target_n)
    probs += p[kept]
    dropped = np.flatnonzero(avail)
    if dropped.size:
        nearest = np.argmin(D[np.ix_(dropped, kept)], axis=1)
        np.add.at(probs, nearest, p[dropped])
    return ScenarioSet(paths=full.paths[kept].copy(), probs=probs)


SCENARIO_COLUMNS = ("scenario_id", "t", "d_dev", "price_dev", "prob")


def write_scenarios(path, sset: ScenarioSet) -> None:
    """Write a scenario set as CSV, one row per (scenario, period)."""
    lines = [",".join(SCENARIO_COLUMNS)]
    for i in range(sset.n):
        prob = repr(float(sset.probs[i]))
        for t in range(sset.horizon):
            lines.append(f"{i},{t + 1},{float(sset.paths[i, t, 0])!r},"
                         f"{float(sset.paths[i, t, 1])!r},{prob}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scenarios(path) -> ScenarioSet:
    """Read a scenario set written by write_scenarios."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != ",".join(SCENARIO_COLUMNS):
        raise ParseError(f"expected header {','.join(SCENARIO_COLUMNS)}", line=1)
    rows = []
    for num, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 5:
            raise ParseError(f"expected 5 fields, got {len(parts)}", line=num)
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]),
                         float(parts[3]), float(parts[4])))
        except ValueError as exc:
            raise ParseError(str(exc), line=num) from None
    if not rows:
        raise ParseError("no scenario rows", line=2)
    n = max(r[0] for r in rows) + 1
    T = max(r[1] for r in rows)
    paths = np.full((n, T, 2), np.nan)
    probs = np.full(n, np.nan)
    for sid, t, d_dev, price_dev, prob in rows:
        paths[sid, t - 1, 0] = d_dev
        paths[sid, t - 1, 1] = price_dev
        probs[sid] = prob
    if np.isnan(paths).any() or np.isnan(probs).any():
        raise ParseError("scenario grid has missing (scenario, period) rows")
    try:
        return ScenarioSet(paths=paths, probs=probs)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


@dataclass
class SPModel:
    """Two-stage stochastic program over a scenario fan.

    One shared first-stage schedule (commitment, dispatch, storage plan) and
    one recourse copy per scenario: adjustment columns for the flexible
    assets plus a full copy of the operating constraints at that scenario's
    realized demand.  Recourse power settles at the realized balancing price
    and the scenario terms enter the objective with their probabilities.
    Models built by fix_first_stage additionally carry per-scenario heat-shed
    columns and have every first-stage column pinned.

    Attributes:
        model: the assembled MILP, sense max.
        y_names: per scenario, the recourse column names in catalog order.
        shed_names: per scenario, the shed column names; None when the
            first stage is free.
        profit_coefs: (n_scenarios, n_recourse) unweighted profit coefficient
            of each recourse column under its scenario's balancing price.
        fixed_schedule: the pinned first stage, if any.
    """

    model: MILPModel
    instance: SystemInstance
    scenarios: ScenarioSet
    tsp: TwoStageProblem
    y_names: list
    shed_names: list | None
    profit_coefs: np.ndarray
    fixed_schedule: ScheduleSolution | None = None

    @property
    def n_scenarios(self) -> int:
        return self.scenarios.n

    @property
    def fixed(self) -> bool:
        return self.fixed_schedule is not None

    def first_stage_schedule(self, result: SolveResult) -> ScheduleSolution:
        """Shared schedule carried by a solved model."""
        if not result.ok:
            raise NotSolved(f"cannot extract from status {result.status!r}")
        return extract_schedule(self.instance, result)

    def recourse_matrix(self, result: SolveResult) -> np.ndarray:
        """(n_scenarios, n_recourse) array of adjustment values."""
        if not result.ok:
            raise NotSolved(f"cannot extract from status {result.status!r}")
        if not self.y_names:
            return np.zeros((self.n_scenarios, 0))
        return np.array([result.value_array(names) for names in self.y_names])

    def shed_matrix(self, result: SolveResult) -> np.ndarray:
        """(n_scenarios, T) array of unserved heat, evaluation models only."""
        if self.shed_names is None:
            raise InvalidSpec("shed columns exist only on fixed evaluation models")
        if not result.ok:
            raise NotSolved(f"cannot extract from status {result.status!r}")
        return np.array([result.value_array(names) for names in self.shed_names])

    def scenario_profits(self, result: SolveResult) -> np.ndarray:
        """Per-scenario profit: shared-schedule profit plus that scenario's
        recourse revenue and fuel terms.  Shed never enters, matching the
        reporting convention that unserved heat is tallied separately."""
        base = schedule_profit(self.instance, self.first_stage_schedule(result))
        return base + np.einsum("si,si->s", self.recourse_matrix(result),
                                self.profit_coefs)


def _csr_supports(matrix) -> list:
    """Per-row (column, value) support lists of a sparse matrix."""
    m = matrix.tocsr()
    out = []
    for r in range(m.shape[0]):
        sl = slice(m.indptr[r], m.indptr[r + 1])
        out.append(list(zip(m.indices[sl].tolist(), m.data[sl].tolist())))
    return out


def _balance_periods(e_names: list) -> list:
    return [int(nm[len("balance["):-1]) if nm.startswith("balance[") else None
            for nm in e_names]


def _append_scenario_blocks(model: MILPModel, tsp: TwoStageProblem,
                            scenarios: ScenarioSet,
                            shed_penalty: float | None) -> tuple:
    """Add one recourse block per scenario to a model holding the x columns.

    Each block contributes free adjustment columns, an equality copy of the
    linking rows at the scenario's realized demand and an inequality copy of
    the operating envelope.  With shed_penalty set, a nonnegative shed column
    joins each balance row as unserved demand, priced into the solver
    objective at the penalty but never into reported profit.
    """
    cat = tsp.catalog
    n_y = cat.n
    probs = scenarios.probs
    d_dev = scenarios.demand_dev
    b_dev = scenarios.price_dev
    xcol = [model.col(nm) for nm in tsp.x_names]
    ex = [[(xcol[j], v) for j, v in row] for row in _csr_supports(tsp.T_e)]
    ix = [[(xcol[j], v) for j, v in row] for row in _csr_supports(tsp.T_i)]
    ew = _csr_supports(tsp.W_e)
    iw = _csr_supports(tsp.W_i)
    bal_t = _balance_periods(tsp.e_names)
    T = tsp.instance.horizon

    y_names, shed_names = [], [] if shed_penalty is not None else None
    coefs = np.zeros((scenarios.n, n_y))
    for i in range(n_y):
        coefs[:, i] = -tsp.ghat[i]
        if cat.kinds[i] == "dp":
            # balancing revenue settles at the realized price
            coefs[:, i] += b_dev[:, cat.periods[i] - 1]
    for s in range(scenarios.n):
        y_base = model.ncols
        names = []
        for i in range(n_y):
            nm = f"{cat.names[i]}@{s}"
            model.add_col(nm, lb=-INF, ub=INF, obj=probs[s] * coefs[s, i])
            names.append(nm)
        y_names.append(names)
        shed_col = {}
        if shed_penalty is not None:
            row = []
            for t in range(1, T + 1):
                nm = f"shed[{s},{t}]"
                shed_col[t] = model.add_col(nm, lb=0.0, ub=INF,
                                            obj=-probs[s] * shed_penalty)
                row.append(nm)
            shed_names.append(row)
        for e, name in enumerate(tsp.e_names):
            coeffs = ex[e] + [(y_base + j, v) for j, v in ew[e]]
            rhs = float(tsp.hhat_e[e])
            t = bal_t[e]
            if t is not None:
                rhs += d_dev[s, t - 1]
                if shed_penalty is not None:
                    coeffs.append((shed_col[t], 1.0))
            model.add_row(f"{name}@{s}", "E", rhs, coeffs)
        for r, name in enumerate(tsp.i_names):
            model.add_row(f"{name}@{s}", "G", float(tsp.hhat_i[r]),
                          ix[r] + [(y_base + j, v) for j, v in iw[r]])
    return y_names, shed_names, coefs


def _nominal_two_stage(instance: SystemInstance, flex: dict | None) -> TwoStageProblem:
    um = demand_price_uncertainty(instance.market.price_array(),
                                  instance.market.demand_array(),
                                  gamma=0.0, radius_mult=0.0)
    return assemble_two_stage(instance, um, flex)


def build_sp_fan(instance: SystemInstance, scenarios: ScenarioSet,
                 flex: dict | None = None) -> SPModel:
    """Assemble the scenario-fan stochastic program.

    The first stage is the complete deterministic model, so the shared
    schedule stays feasible for nominal demand; each scenario adds recourse
    columns for the flexible assets and a full constraint copy at its
    realized demand, with recourse power paid the realized balancing price.

    Raises:
        DimensionMismatch: scenario horizon differs from the instance's.
    """
    if scenarios.horizon != instance.horizon:
        raise DimensionMismatch(
            f"scenario horizon {scenarios.horizon} != instance horizon "
            f"{instance.horizon}")
    tsp = _nominal_two_stage(instance, flex)
    model = build_deterministic_milp(instance)
    model.name = "sp_fan"
    y_names, _, coefs = _append_scenario_blocks(model, tsp, scenarios,
                                                shed_penalty=None)
    return SPModel(model=model, instance=instance, scenarios=scenarios,
                   tsp=tsp, y_names=y_names, shed_names=None,
                   profit_coefs=coefs)


def _first_stage_values(instance: SystemInstance, sol: ScheduleSolution,
                        names: list, integer: np.ndarray) -> list:
    unit_of = {u.name: k for k, u in enumerate(instance.units)}
    stor_of = {st.name: i for i, st in enumerate(instance.storages)}
    vals = []
    for j, nm in enumerate(names):
        blk, rest = nm.split("[", 1)
        ent, t = rest[:-1].rsplit(",", 1)
        row = stor_of[ent] if blk in ("u", "s") else unit_of[ent]
        val = float(getattr(sol, blk)[row, int(t) - 1])
        vals.append(round(val) if integer[j] else val)
    return vals


def fix_first_stage(sp: SPModel, x_star: ScheduleSolution,
                    shed_penalty: float = 10000.0) -> SPModel:
    """Pin a candidate schedule and rebuild the fan for evaluation.

    Every first-stage column is fixed to x_star and each scenario's heat
    balance gains a nonnegative shed column (unserved demand), so the model
    stays feasible for any schedule that satisfies the static constraints.
    The solver objective prices shed at shed_penalty per unit to keep it a
    last resort; reported profits exclude the penalty entirely.

    Raises:
        InfeasibleFirstStage: x_star violates a non-balance constraint family.
    """
    rep = validate_schedule(sp.instance, x_star, tol=1e-6)
    bad = [r for r in rep.records if r.family != "balance"]
    if bad:
        worst = max(bad, key=lambda r: abs(r.residual))
        raise InfeasibleFirstStage(
            f"schedule breaks {len(bad)} static constraints, worst: {worst}")
    model = MILPModel("sp_eval", sense="max")
    tsp = sp.tsp
    vals = _first_stage_values(sp.instance, x_star, tsp.x_names, tsp.x_integer)
    for j, nm in enumerate(tsp.x_names):
        model.add_col(nm, lb=vals[j], ub=vals[j],
                      integer=bool(tsp.x_integer[j]), obj=-float(tsp.c_mean[j]))
    model.obj_const = -tsp.obj_const
    y_names, shed_names, coefs = _append_scenario_blocks(
        model, tsp, sp.scenarios, shed_penalty=shed_penalty)
    return SPModel(model=model, instance=sp.instance, scenarios=sp.scenarios,
                   tsp=tsp, y_names=y_names, shed_names=shed_names,
                   profit_coefs=coefs, fixed_schedule=x_star.copy())
