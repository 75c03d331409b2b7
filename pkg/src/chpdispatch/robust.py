"""Affinely adjustable robust counterpart of the day-ahead dispatch problem.

The deterministic MILP is split into a two-stage form: here-and-now columns
(commitment, nominal dispatch) and wait-and-see recourse columns (heat,
power and storage adjustments that may depend affinely on the realized
demand deviations).  Robustness over the budget uncertainty set is enforced
row by row through strong LP duality against the lifted polyhedron, which
turns the semi-infinite constraint system into a finite MILP in the
first-stage columns, the decision-rule coefficients and one dual multiplier
block per robustified inequality.

Two rule families are supported: linear rules y = Y d and piecewise-linear
rules y = Y+ max(d, 0) + Y- max(-d, 0).  A vertex-enumeration model over
the same lifted set is provided as an independent cross-check for small
instances.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sparse

from .errors import (DimensionMismatch, HorizonMismatch, InfeasibleRobust,
                     InvalidSpec, NotSolved, SolverError, UnsupportedSet)
from .milp import INF, MILPModel, SolveResult, SolverConfig, solve
from .system import (ScheduleSolution, SystemInstance, UnitKind,
                     build_deterministic_milp, extract_schedule,
                     validate_schedule)
from .uncertainty import (BudgetUncertaintySet, LiftedPolyhedron, MomentModel,
                          UncertaintyMapping, UncertaintyModel,
                          enumerate_lifted_vertices, enumerate_vertices,
                          linearize_budget_set)


class RuleKind(Enum):
    LINEAR = "ldr"
    PIECEWISE_LINEAR = "pldr"

    @classmethod
    def from_label(cls, label: str) -> "RuleKind":
        for kind in cls:
            if kind.value == label:
                return kind
        raise InvalidSpec(f"unknown decision rule {label!r}; use 'ldr' or 'pldr'")


@dataclass(frozen=True)
class RecourseCatalog:
    """Names and coordinates of the wait-and-see columns.

    Each recourse column is one adjustment channel of one entity in one
    period: dp/dq for flexible units (dp only where the unit produces
    power), du/ds for every storage.
    """

    names: tuple
    kinds: tuple          # "dp" | "dq" | "du" | "ds" per row
    entities: tuple       # unit or storage name per row
    periods: np.ndarray   # 1-based period per row

    def __post_init__(self):
        object.__setattr__(self, "periods", np.asarray(self.periods, dtype=int))
        index = {name: i for i, name in enumerate(self.names)}
        if len(index) != len(self.names):
            raise InvalidSpec("recourse column names must be unique")
        object.__setattr__(self, "_index", index)

    @property
    def n(self) -> int:
        return len(self.names)

    def index(self, kind: str, entity: str, period: int) -> int:
        return self._index[f"{kind}[{entity},{period}]"]

    def __contains__(self, name: str) -> bool:
        return name in self._index


def _build_catalog(instance: SystemInstance, flex: dict) -> RecourseCatalog:
    T = instance.horizon
    names, kinds, entities, periods = [], [], [], []

    def emit(kind, entity, t):
        names.append(f"{kind}[{entity},{t}]")
        kinds.append(kind)
        entities.append(entity)
        periods.append(t)

    for unit in instance.units:
        if not flex[unit.name]:
            continue
        if unit.kind is not UnitKind.HEAT_ONLY:
            for t in range(1, T + 1):
                emit("dp", unit.name, t)
        for t in range(1, T + 1):
            emit("dq", unit.name, t)
    for st in instance.storages:
        for t in range(1, T + 1):
            emit("du", st.name, t)
        for t in range(1, T + 1):
            emit("ds", st.name, t)
    return RecourseCatalog(names=tuple(names), kinds=tuple(kinds),
                           entities=tuple(entities),
                           periods=np.array(periods, dtype=int))


@dataclass
class TwoStageProblem:
    """Two-stage form of one dispatch instance under one uncertainty model.

    All rows are in minimization convention: the first-stage block reads
    A x >= b, the linking equalities T_e x + W_e y = hhat_e + H_e d and the
    linking inequalities T_i x + W_i y >= hhat_i + H_i d.  Recourse cost is
    (ghat + G d)' y; c_mean is the negated deterministic profit vector, so
    reported objectives flip sign back to profit.
    """

    instance: SystemInstance
    dim: int
    x_names: list
    x_lb: np.ndarray
    x_ub: np.ndarray
    x_integer: np.ndarray
    c_mean: np.ndarray
    obj_const: float
    A: sparse.csr_matrix
    b: np.ndarray
    a_names: list
    T_e: sparse.csr_matrix
    W_e: sparse.csr_matrix
    hhat_e: np.ndarray
    H_e: np.ndarray
    e_names: list
    T_i: sparse.csr_matrix
    W_i: sparse.csr_matrix
    hhat_i: np.ndarray
    H_i: np.ndarray
    i_names: list
    ghat: np.ndarray
    G: np.ndarray
    catalog: RecourseCatalog
    flex: dict

    @property
    def n_x(self) -> int:
        return len(self.x_names)

    @property
    def n_y(self) -> int:
        return self.catalog.n

    @property
    def n_eq(self) -> int:
        return len(self.e_names)

    @property
    def n_ineq(self) -> int:
        return len(self.i_names)

    @property
    def mapping(self) -> UncertaintyMapping:
        return UncertaintyMapping(G=self.G, H_e=self.H_e, H_i=self.H_i,
                                  g_hat=self.ghat, h_e_hat=self.hhat_e,
                                  h_i_hat=self.hhat_i)

    def validate(self) -> None:
        n_x, n_y = self.n_x, self.n_y
        blocks = {"A": (self.A, (len(self.a_names), n_x)),
                  "T_e": (self.T_e, (self.n_eq, n_x)),
                  "W_e": (self.W_e, (self.n_eq, n_y)),
                  "T_i": (self.T_i, (self.n_ineq, n_x)),
                  "W_i": (self.W_i, (self.n_ineq, n_y))}
        for name, (mat, shape) in blocks.items():
            if mat.shape != shape:
                raise DimensionMismatch(f"{name} has shape {mat.shape}, need {shape}")
        self.mapping.validate(n_y, self.n_eq, self.n_ineq, self.dim)
        # every uncertain coordinate must act somewhere, unless the model
        # is degenerate (zero radius and zero price loading)
        load = (np.abs(self.G).sum(axis=0) + np.abs(self.H_e).sum(axis=0)
                + np.abs(self.H_i).sum(axis=0))
        if load.max() > 0 and load.min() == 0:
            dead = int(np.argmin(load))
            raise InvalidSpec(f"uncertain coordinate {dead} touches no row or cost")


def _row_parts(name: str):
    head, _, rest = name.partition("[")
    return head, rest.rstrip("]").split(",")


def _to_triplets(rows, n_cols):
    """rows: list of (coeff list, ...); returns csr from (row, col, val)."""
    data, ri, ci = [], [], []
    for r, coeffs in enumerate(rows):
        for c, val in coeffs:
            if val != 0.0:
                ri.append(r)
                ci.append(c)
                data.append(float(val))
    return sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n_cols))


def assemble_two_stage(instance: SystemInstance, um: UncertaintyModel,
                       flex: dict | None = None) -> TwoStageProblem:
    """Split the deterministic model into the two-stage robust form.

    The heat balance, storage dynamics, terminal condition and the
    back-pressure ratio of flexible units become linking equalities; bound,
    fuel and ramp rows of flexible entities are regenerated with their
    recourse terms as linking inequalities.  Every deterministic row,
    including the nominal versions of the regenerated ones, stays in the
    first-stage block, so the nominal schedule remains feasible on its own.

    Args:
        instance: portfolio and market data.
        um: uncertainty model supplying the demand radius and price loading.
        flex: optional {unit name: bool} overriding each unit's flexible
            flag; storages always carry recourse.
    """
    T = instance.horizon
    uset = um.uset
    if uset.dim != T:
        raise HorizonMismatch(f"uncertainty dim {uset.dim} differs from horizon {T}")
    radius = uset.radius
    loading = np.asarray(um.price_loading, dtype=float)
    if loading.shape != (T,):
        raise DimensionMismatch("price loading length differs from horizon")

    flags = {u.name: bool(u.flexible) for u in instance.units}
    if flex:
        for name, val in flex.items():
            if name not in flags:
                raise InvalidSpec(f"flex override for unknown unit {name!r}")
            flags[name] = bool(val)

    det = build_deterministic_milp(instance)
    n_x = len(det.col_names)
    x_names = list(det.col_names)
    x_lb = np.array(det.col_lb, dtype=float)
    x_ub = np.array(det.col_ub, dtype=float)
    x_integer = np.array(det.col_integer, dtype=bool)
    c_mean = -np.array(det.obj, dtype=float)
    obj_const = -float(det.obj_const)
    xcol = {name: j for j, name in enumerate(x_names)}

    catalog = _build_catalog(instance, flags)
    ycol = {name: i for i, name in enumerate(catalog.names)}

    bp_flex = {u.name for u in instance.units
               if flags[u.name] and u.kind is UnitKind.BACK_PRESSURE}

    # first-stage block: every deterministic row not moved to the linking
    # equalities, rewritten to >= form (equalities split into a pair)
    A_det = det.constraint_matrix()
    a_rows, b_vals, a_names = [], [], []
    for r in range(len(det.row_names)):
        name = det.row_names[r]
        head, args = _row_parts(name)
        if head in ("balance", "content", "terminal"):
            continue
        if head == "ratio" and args[0] in bp_flex:
            continue
        lo, hi = A_det.indptr[r], A_det.indptr[r + 1]
        coeffs = list(zip(A_det.indices[lo:hi], A_det.data[lo:hi]))
        sense, rhs = det.row_sense[r], det.row_rhs[r]
        if sense == "G":
            a_rows.append(coeffs), b_vals.append(rhs), a_names.append(name)
        elif sense == "L":
            a_rows.append([(c, -v) for c, v in coeffs])
            b_vals.append(-rhs)
            a_names.append(name)
        else:
            a_rows.append(coeffs), b_vals.append(rhs), a_names.append(name + "#ge")
            a_rows.append([(c, -v) for c, v in coeffs])
            b_vals.append(-rhs)
            a_names.append(name + "#le")

    # linking equalities: balance, storage dynamics, flexible BP ratio
    e_T, e_W, e_rhs, e_names, e_H = [], [], [], [], []

    def eq_row(name, xc, yc, rhs, hrow=None):
        e_T.append(xc), e_W.append(yc), e_rhs.append(float(rhs))
        e_names.append(name)
        e_H.append(np.zeros(T) if hrow is None else hrow)

    d_hat = instance.market.demand_array()
    for t in range(1, T + 1):
        xc = [(xcol[f"q[{u.name},{t}]"], 1.0) for u in instance.units]
        xc += [(xcol[f"u[{s.name},{t}]"], -1.0) for s in instance.storages]
        yc = [(ycol[f"dq[{u.name},{t}]"], 1.0) for u in instance.units
              if flags[u.name]]
        yc += [(ycol[f"du[{s.name},{t}]"], -1.0) for s in instance.storages]
        hrow = np.zeros(T)
        hrow[t - 1] = radius[t - 1]
        eq_row(f"balance[{t}]", xc, yc, d_hat[t - 1], hrow)
    for st in instance.storages:
        i = st.name
        for t in range(1, T + 1):
            xc = [(xcol[f"s[{i},{t}]"], 1.0), (xcol[f"u[{i},{t}]"], -1.0)]
            yc = [(ycol[f"ds[{i},{t}]"], 1.0), (ycol[f"du[{i},{t}]"], -1.0)]
            if t > 1:
                xc.append((xcol[f"s[{i},{t - 1}]"], -1.0))
                yc.append((ycol[f"ds[{i},{t - 1}]"], -1.0))
            eq_row(f"content[{i},{t}]", xc, yc, st.s_init if t == 1 else 0.0)
        eq_row(f"terminal[{i}]", [(xcol[f"s[{i},{T}]"], 1.0)],
               [(ycol[f"ds[{i},{T}]"], 1.0)], st.s_init)
    for unit in instance.units:
        if unit.name not in bp_flex:
            continue
        k = unit.name
        for t in range(1, T + 1):
            eq_row(f"ratio[{k},{t}]",
                   [(xcol[f"p[{k},{t}]"], 1.0), (xcol[f"q[{k},{t}]"], -unit.r_b)],
                   [(ycol[f"dp[{k},{t}]"], 1.0), (ycol[f"dq[{k},{t}]"], -unit.r_b)],
                   0.0)

    # linking inequalities: adjusted bounds, fuel limits and fuel ramps for
    # flexible units, content and flow bounds for storages, all in >= form
    i_T, i_W, i_rhs, i_names = [], [], [], []

    def ineq_row(name, xc, yc, rhs):
        i_T.append(xc), i_W.append(yc), i_rhs.append(float(rhs))
        i_names.append(name)

    for unit in instance.units:
        if not flags[unit.name]:
            continue
        k = unit.name
        has_p = unit.kind is not UnitKind.HEAT_ONLY
        for t in range(1, T + 1):
            v = xcol[f"v[{k},{t}]"]
            p, q, f = (xcol[f"{b}[{k},{t}]"] for b in "pqf")
            dq = ycol[f"dq[{k},{t}]"]
            dp = ycol[f"dp[{k},{t}]"] if has_p else None
            ineq_row(f"rheat_ub[{k},{t}]",
                     [(v, unit.q_max), (q, -1.0)], [(dq, -1.0)], 0.0)
            ineq_row(f"rheat_lb[{k},{t}]",
                     [(q, 1.0), (v, -unit.q_min)], [(dq, 1.0)], 0.0)
            if has_p:
                ineq_row(f"rpower_ub[{k},{t}]",
                         [(v, unit.p_max), (p, -1.0)], [(dp, -1.0)], 0.0)
                ineq_row(f"rpower_lb[{k},{t}]",
                         [(p, 1.0), (v, -unit.p_min)], [(dp, 1.0)], 0.0)
            dfuel = [(dq, unit.phi_q)] + ([(dp, unit.phi_p)] if has_p else [])
            ineq_row(f"rfuel_ub[{k},{t}]",
                     [(v, unit.f_max), (f, -1.0)],
                     [(c, -w) for c, w in dfuel], 0.0)
            ineq_row(f"rfuel_lb[{k},{t}]",
                     [(f, 1.0), (v, -unit.f_min)], list(dfuel), 0.0)
            if unit.kind is UnitKind.EXTRACTION:
                ineq_row(f"rratio[{k},{t}]",
                         [(p, 1.0), (q, -unit.r_b)],
                         [(dp, 1.0), (dq, -unit.r_b)], 0.0)
            # fuel ramps on the adjusted fuel path
            prev_x, prev_y = [], []
            if t > 1:
                prev_x = [(xcol[f"f[{k},{t - 1}]"], 1.0)]
                prev_y = [(ycol[f"dq[{k},{t - 1}]"], unit.phi_q)]
                if has_p:
                    prev_y.append((ycol[f"dp[{k},{t - 1}]"], unit.phi_p))
            base = unit.f_init if t == 1 else 0.0
            ineq_row(f"rramp_up[{k},{t}]",
                     [(f, -1.0)] + prev_x,
                     [(c, -w) for c, w in dfuel] + prev_y,
                     -unit.r_up - base)
            ineq_row(f"rramp_dn[{k},{t}]",
                     [(f, 1.0)] + [(c, -w) for c, w in prev_x],
                     list(dfuel) + [(c, -w) for c, w in prev_y],
                     -unit.r_dn + base)
    for st in instance.storages:
        i = st.name
        for t in range(1, T + 1):
            s, u = xcol[f"s[{i},{t}]"], xcol[f"u[{i},{t}]"]
            ds, du = ycol[f"ds[{i},{t}]"], ycol[f"du[{i},{t}]"]
            ineq_row(f"rcontent_ub[{i},{t}]", [(s, -1.0)], [(ds, -1.0)], -st.s_max)
            ineq_row(f"rcontent_lb[{i},{t}]", [(s, 1.0)], [(ds, 1.0)], st.s_min)
            ineq_row(f"rflow_ub[{i},{t}]", [(u, -1.0)], [(du, -1.0)], -st.u_max)
            ineq_row(f"rflow_lb[{i},{t}]", [(u, 1.0)], [(du, 1.0)], st.u_min)

    # recourse cost: fuel burn minus day-ahead revenue on dp, with the
    # balancing-price deviation loading the dp rows through G
    n_y = catalog.n
    lam = instance.market.price_array()
    ghat = np.zeros(n_y)
    G = np.zeros((n_y, T))
    for i in range(n_y):
        kind, ent, t = catalog.kinds[i], catalog.entities[i], int(catalog.periods[i])
        if kind == "dp":
            unit = instance.unit(ent)
            ghat[i] = unit.c_fuel * unit.phi_p - lam[t - 1]
            G[i, t - 1] = -loading[t - 1]
        elif kind == "dq":
            ghat[i] = instance.unit(ent).c_fuel * instance.unit(ent).phi_q

    tsp = TwoStageProblem(
        instance=instance, dim=T,
        x_names=x_names, x_lb=x_lb, x_ub=x_ub, x_integer=x_integer,
        c_mean=c_mean, obj_const=obj_const,
        A=_to_triplets(a_rows, n_x), b=np.array(b_vals, dtype=float),
        a_names=a_names,
        T_e=_to_triplets(e_T, n_x), W_e=_to_triplets(e_W, n_y),
        hhat_e=np.array(e_rhs, dtype=float), H_e=np.array(e_H), e_names=e_names,
        T_i=_to_triplets(i_T, n_x), W_i=_to_triplets(i_W, n_y),
        hhat_i=np.array(i_rhs, dtype=float),
        H_i=np.zeros((len(i_names), T)), i_names=i_names,
        ghat=ghat, G=G, catalog=catalog, flex=flags)
    tsp.validate()
    return tsp


@dataclass(frozen=True)
class DecisionRuleStructure:
    """Rule family plus the non-anticipativity mask of admissible entries.

    allowed[i, j] is True when recourse row i may react to the deviation of
    period j + 1; entries outside the mask are structurally absent from the
    counterpart, which is the same as pinning them to zero.
    """

    kind: RuleKind
    allowed: np.ndarray

    @property
    def n_y(self) -> int:
        return self.allowed.shape[0]

    @property
    def dim(self) -> int:
        return self.allowed.shape[1]


def nonanticipativity_mask(catalog: RecourseCatalog, dim: int,
                           kind: RuleKind = RuleKind.LINEAR) -> DecisionRuleStructure:
    """Lower-triangular information structure: period t sees periods <= t."""
    periods = catalog.periods
    allowed = periods[:, None] >= np.arange(1, dim + 1)[None, :]
    return DecisionRuleStructure(kind=kind, allowed=allowed)


def _policy_obj_coeffs(tsp: TwoStageProblem, mm: MomentModel, kind: RuleKind):
    """Expected recourse cost coefficients per rule entry.

    E[(ghat + G d)' y(d)] expands to ghat_i E[d_j] + (G E[d d']) entries for
    linear rules and to the half-normal means with the signed cross moments
    for piecewise rules.
    """
    if kind is RuleKind.LINEAR:
        second = mm.cov_delta + np.outer(mm.mean_delta, mm.mean_delta)
        return (np.outer(tsp.ghat, mm.mean_delta) + tsp.G @ second,)
    coef_p = np.outer(tsp.ghat, mm.mean_plus) + tsp.G @ mm.cross_plus
    coef_m = np.outer(tsp.ghat, mm.mean_minus) + tsp.G @ mm.cross_minus
    return coef_p, coef_m


def _add_policy_columns(model: MILPModel, tsp: TwoStageProblem,
                        mm: MomentModel, drs: DecisionRuleStructure):
    """First-stage columns plus the admissible rule entries, objective set."""
    for j, name in enumerate(tsp.x_names):
        model.add_col(name, lb=tsp.x_lb[j], ub=tsp.x_ub[j],
                      integer=bool(tsp.x_integer[j]), obj=tsp.c_mean[j])
    model.obj_const = tsp.obj_const
    names = tsp.catalog.names
    y_cols, yp_cols, ym_cols = {}, {}, {}
    if drs.kind is RuleKind.LINEAR:
        coef, = _policy_obj_coeffs(tsp, mm, drs.kind)
        for i in range(drs.n_y):
            for j in np.nonzero(drs.allowed[i])[0]:
                cname = f"Y[{names[i]},{j + 1}]"
                model.add_col(cname, lb=-INF, ub=INF, obj=coef[i, j])
                y_cols[(i, int(j))] = cname
    else:
        coef_p, coef_m = _policy_obj_coeffs(tsp, mm, drs.kind)
        for i in range(drs.n_y):
            for j in np.nonzero(drs.allowed[i])[0]:
                pname = f"Yp[{names[i]},{j + 1}]"
                mname = f"Ym[{names[i]},{j + 1}]"
                model.add_col(pname, lb=-INF, ub=INF, obj=coef_p[i, j])
                model.add_col(mname, lb=-INF, ub=INF, obj=coef_m[i, j])
                yp_cols[(i, int(j))] = pname
                ym_cols[(i, int(j))] = mname
    return y_cols, yp_cols, ym_cols


def _check_shapes(tsp, mm, drs):
    if mm.dim != tsp.dim:
        raise DimensionMismatch("moment model dim differs from problem dim")
    if drs.allowed.shape != (tsp.n_y, tsp.dim):
        raise DimensionMismatch("rule mask shape differs from recourse catalog")


@dataclass
class RobustCounterpart:
    """Finite MILP equivalent to the adjustable robust problem."""

    model: MILPModel
    tsp: TwoStageProblem
    poly: LiftedPolyhedron
    mm: MomentModel
    drs: DecisionRuleStructure
    y_cols: dict
    yp_cols: dict
    ym_cols: dict
    n_robust_rows: int
    n_dual_cols: int


def build_robust_counterpart(tsp: TwoStageProblem, poly: LiftedPolyhedron,
                             mm: MomentModel,
                             drs: DecisionRuleStructure) -> RobustCounterpart:
    """Dualize every linking inequality against the lifted budget polytope.

    For row r the worst case min over L d' >= l of (W_i y(d') - H' d')_r is
    replaced by l' lam_r with the dual feasibility equalities
    L' lam_r = (row r of W_i Y' - H') and lam_r >= 0; linking equalities
    become exact coefficient identities on the rule matrices.  The result
    is one MILP whose optimum equals the robust optimum, in minimization
    convention (negate for profit).
    """
    _check_shapes(tsp, mm, drs)
    n = tsp.dim
    if poly.dim != n:
        raise DimensionMismatch("lifted polyhedron dim differs from problem dim")
    gamma = -float(poly.l[-1])
    m_rows = tsp.n_ineq
    pldr = drs.kind is RuleKind.PIECEWISE_LINEAR
    allowed = drs.allowed

    model = MILPModel(f"robust_{drs.kind.value}", sense="min")
    y_cols, yp_cols, ym_cols = _add_policy_columns(model, tsp, mm, drs)

    # a row's worst case only involves the coordinates its recourse entries
    # may observe (plus direct rhs loadings); the budget set projects onto
    # any coordinate subset as the same kind of set, so each row is dualized
    # against the smaller projected lift without changing the optimum
    Wi = tsp.W_i
    obs_rows = []
    for r in range(m_rows):
        seen = np.asarray(tsp.H_i[r] != 0.0)
        for i in Wi.indices[Wi.indptr[r]:Wi.indptr[r + 1]]:
            seen = seen | allowed[i]
        obs_rows.append(np.nonzero(seen)[0])

    lifts: dict[int, LiftedPolyhedron] = {}

    def lift_for(k):
        if k not in lifts:
            lifts[k] = linearize_budget_set(
                BudgetUncertaintySet(dim=k, gamma=min(gamma, float(k))))
        return lifts[k]

    lam_cols: list = []
    for r in range(m_rows):
        k = len(obs_rows[r])
        base = len(model.col_names)
        if k:
            for a in range(6 * k + 1):
                model.add_col(f"lam[{r},{a}]", lb=0.0, ub=INF)
        lam_cols.append(base)

    def lam_col(r, a):
        return lam_cols[r] + a

    # first-stage rows and nominal linking equalities on x
    A = tsp.A
    for r, name in enumerate(tsp.a_names):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        model.add_row(name, "G", tsp.b[r],
                      list(zip(A.indices[lo:hi], A.data[lo:hi])))
    Te = tsp.T_e
    for e, name in enumerate(tsp.e_names):
        lo, hi = Te.indptr[e], Te.indptr[e + 1]
        model.add_row(f"nom_{name}", "E", tsp.hhat_e[e],
                      list(zip(Te.indices[lo:hi], Te.data[lo:hi])))

    # rule identities per equality row and uncertain coordinate
    We = tsp.W_e
    for e in range(tsp.n_eq):
        lo, hi = We.indptr[e], We.indptr[e + 1]
        support = list(zip(We.indices[lo:hi], We.data[lo:hi]))
        for j in range(n):
            rhs = float(tsp.H_e[e, j])
            if pldr:
                up = [(model.col(yp_cols[(i, j)]), w) for i, w in support
                      if (i, j) in yp_cols]
                dn = [(model.col(ym_cols[(i, j)]), w) for i, w in support
                      if (i, j) in ym_cols]
                if up or rhs != 0.0:
                    model.add_row(f"rule_p[{tsp.e_names[e]},{j + 1}]", "E", rhs, up)
                if dn or rhs != 0.0:
                    model.add_row(f"rule_m[{tsp.e_names[e]},{j + 1}]", "E", -rhs, dn)
            else:
                cc = [(model.col(y_cols[(i, j)]), w) for i, w in support
                      if (i, j) in y_cols]
                if cc or rhs != 0.0:
                    model.add_row(f"rule[{tsp.e_names[e]},{j + 1}]", "E", rhs, cc)

    # robustified inequalities: nominal part plus the dual bound l' lam_r
    Ti = tsp.T_i
    col_support_cache: dict = {}

    def col_support(k):
        if k not in col_support_cache:
            Lcsc = sparse.csc_matrix(lift_for(k).L)
            sup = []
            for c in range(3 * k):
                lo, hi = Lcsc.indptr[c], Lcsc.indptr[c + 1]
                sup.append(list(zip(Lcsc.indices[lo:hi], Lcsc.data[lo:hi])))
            col_support_cache[k] = sup
        return col_support_cache[k]

    for r in range(m_rows):
        k = len(obs_rows[r])
        lo, hi = Ti.indptr[r], Ti.indptr[r + 1]
        coeffs = list(zip(Ti.indices[lo:hi], Ti.data[lo:hi]))
        if k:
            l_vec = lift_for(k).l
            coeffs += [(lam_col(r, a), float(l_vec[a]))
                       for a in range(6 * k + 1) if l_vec[a] != 0.0]
        model.add_row(f"rob[{tsp.i_names[r]}]", "G", tsp.hhat_i[r], coeffs)

    # dual feasibility: L' lam_r matches the rule coefficients row-wise,
    # expressed in the row's local coordinates
    for r in range(m_rows):
        obs = obs_rows[r]
        k = len(obs)
        if k == 0:
            continue
        sup_k = col_support(k)
        lo, hi = Wi.indptr[r], Wi.indptr[r + 1]
        support = list(zip(Wi.indices[lo:hi], Wi.data[lo:hi]))
        for c in range(3 * k):
            j = int(obs[c % k])
            coeffs = [(lam_col(r, a), val) for a, val in sup_k[c]]
            rhs = 0.0
            if c < k:
                rhs = -float(tsp.H_i[r, j])
                if not pldr:
                    coeffs += [(model.col(y_cols[(i, j)]), -w) for i, w in support
                               if (i, j) in y_cols]
            elif pldr and c < 2 * k:
                coeffs += [(model.col(yp_cols[(i, j)]), -w) for i, w in support
                           if (i, j) in yp_cols]
            elif pldr:
                coeffs += [(model.col(ym_cols[(i, j)]), -w) for i, w in support
                           if (i, j) in ym_cols]
            model.add_row(f"dual[{r},{c}]", "E", rhs, coeffs)

    model.canonicalize()
    return RobustCounterpart(model=model, tsp=tsp, poly=poly, mm=mm, drs=drs,
                             y_cols=y_cols, yp_cols=yp_cols, ym_cols=ym_cols,
                             n_robust_rows=m_rows,
                             n_dual_cols=sum(6 * len(o) + 1 for o in obs_rows
                                             if len(o)))


@dataclass
class VertexCounterpart:
    """Scenario-style exact model enforcing the rules at every lifted vertex.

    Only practical for small dimensions; serves as an independent oracle
    for the duality-based counterpart.
    """

    model: MILPModel
    tsp: TwoStageProblem
    mm: MomentModel
    drs: DecisionRuleStructure
    y_cols: dict
    yp_cols: dict
    ym_cols: dict
    n_vertices: int


def build_vertex_model(tsp: TwoStageProblem, uset: BudgetUncertaintySet,
                       mm: MomentModel,
                       drs: DecisionRuleStructure) -> VertexCounterpart:
    """Enforce the linking rows at every vertex of the lifted polyhedron."""
    _check_shapes(tsp, mm, drs)
    n = tsp.dim
    if uset.dim != n:
        raise DimensionMismatch("uncertainty dim differs from problem dim")
    pldr = drs.kind is RuleKind.PIECEWISE_LINEAR
    model = MILPModel(f"vertex_{drs.kind.value}", sense="min")
    y_cols, yp_cols, ym_cols = _add_policy_columns(model, tsp, mm, drs)

    A = tsp.A
    for r, name in enumerate(tsp.a_names):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        model.add_row(name, "G", tsp.b[r],
                      list(zip(A.indices[lo:hi], A.data[lo:hi])))

    vertices = enumerate_lifted_vertices(uset)

    def y_terms(support, vert):
        delta, dplus, dminus = vert[:n], vert[n:2 * n], vert[2 * n:]
        out = []
        for i, w in support:
            if pldr:
                for j in np.nonzero(dplus)[0]:
                    if (i, j) in yp_cols:
                        out.append((model.col(yp_cols[(i, int(j))]),
                                    w * dplus[j]))
                for j in np.nonzero(dminus)[0]:
                    if (i, j) in ym_cols:
                        out.append((model.col(ym_cols[(i, int(j))]),
                                    w * dminus[j]))
            else:
                for j in np.nonzero(delta)[0]:
                    if (i, j) in y_cols:
                        out.append((model.col(y_cols[(i, int(j))]),
                                    w * delta[j]))
        return out

    Te, We = tsp.T_e, tsp.W_e
    Ti, Wi = tsp.T_i, tsp.W_i
    for s, vert in enumerate(vertices):
        delta = vert[:n]
        for e in range(tsp.n_eq):
            lo, hi = Te.indptr[e], Te.indptr[e + 1]
            coeffs = list(zip(Te.indices[lo:hi], Te.data[lo:hi]))
            lo, hi = We.indptr[e], We.indptr[e + 1]
            coeffs += y_terms(list(zip(We.indices[lo:hi], We.data[lo:hi])), vert)
            model.add_row(f"veq[{e},{s}]", "E",
                          tsp.hhat_e[e] + float(tsp.H_e[e] @ delta), coeffs)
        for r in range(tsp.n_ineq):
            lo, hi = Ti.indptr[r], Ti.indptr[r + 1]
            coeffs = list(zip(Ti.indices[lo:hi], Ti.data[lo:hi]))
            lo, hi = Wi.indptr[r], Wi.indptr[r + 1]
            coeffs += y_terms(list(zip(Wi.indices[lo:hi], Wi.data[lo:hi])), vert)
            model.add_row(f"vineq[{r},{s}]", "G",
                          tsp.hhat_i[r] + float(tsp.H_i[r] @ delta), coeffs)

    model.canonicalize()
    return VertexCounterpart(model=model, tsp=tsp, mm=mm, drs=drs,
                             y_cols=y_cols, yp_cols=yp_cols, ym_cols=ym_cols,
                             n_vertices=len(vertices))


@dataclass
class AffinePolicy:
    """First-stage schedule plus the extracted decision-rule matrices."""

    kind: RuleKind
    first_stage: ScheduleSolution
    catalog: RecourseCatalog
    Y: np.ndarray | None = None
    Y_plus: np.ndarray | None = None
    Y_minus: np.ndarray | None = None
    objective: float = 0.0

    @property
    def n_y(self) -> int:
        return self.catalog.n

    @property
    def dim(self) -> int:
        mat = self.Y if self.Y is not None else self.Y_plus
        return mat.shape[1]


def extract_policy(built, result: SolveResult) -> AffinePolicy:
    """Read a solved counterpart back into schedule plus rule matrices.

    Accepts either a RobustCounterpart or a VertexCounterpart; the reported
    objective is flipped back to profit.
    """
    if not result.ok or result.values is None:
        raise NotSolved(f"counterpart status {result.status!r} has no solution")
    tsp, drs = built.tsp, built.drs
    sol = extract_schedule(tsp.instance, result)
    sol.objective = -float(result.objective)
    n_y, dim = tsp.n_y, tsp.dim
    vals = result.values
    if drs.kind is RuleKind.LINEAR:
        Y = np.zeros((n_y, dim))
        for (i, j), name in built.y_cols.items():
            Y[i, j] = vals[name]
        return AffinePolicy(kind=drs.kind, first_stage=sol, catalog=tsp.catalog,
                            Y=Y, objective=sol.objective)
    Yp = np.zeros((n_y, dim))
    Ym = np.zeros((n_y, dim))
    for (i, j), name in built.yp_cols.items():
        Yp[i, j] = vals[name]
    for (i, j), name in built.ym_cols.items():
        Ym[i, j] = vals[name]
    return AffinePolicy(kind=drs.kind, first_stage=sol, catalog=tsp.catalog,
                        Y_plus=Yp, Y_minus=Ym, objective=sol.objective)


def solve_robust(rc: RobustCounterpart,
                 config: SolverConfig | None = None):
    """Solve the counterpart; returns (policy, raw result).

    Raises InfeasibleRobust when no policy satisfies the protection level.
    """
    result = solve(rc.model, config or SolverConfig())
    if result.status == "infeasible":
        raise InfeasibleRobust(
            "no feasible policy at this protection level"
            + (f": {result.message}" if result.message else ""))
    if not result.ok:
        raise SolverError(f"counterpart solve ended with status {result.status!r}")
    return extract_policy(rc, result), result


def apply_policy(policy: AffinePolicy, delta: np.ndarray) -> np.ndarray:
    """Recourse adjustments for one realization of the deviations."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (policy.dim,):
        raise DimensionMismatch(f"delta has shape {delta.shape}, need ({policy.dim},)")
    if policy.kind is RuleKind.LINEAR:
        return policy.Y @ delta
    return policy.Y_plus @ np.maximum(delta, 0.0) \
        + policy.Y_minus @ np.maximum(-delta, 0.0)


def adjusted_schedule(instance: SystemInstance, policy: AffinePolicy,
                      delta: np.ndarray) -> ScheduleSolution:
    """First-stage schedule with the policy's adjustments applied.

    Heat, power and storage channels shift directly; fuel moves with the
    unit's marginal fuel use of the adjusted outputs.
    """
    adj = apply_policy(policy, delta)
    sol = policy.first_stage.copy()
    unit_row = {u.name: i for i, u in enumerate(instance.units)}
    st_row = {s.name: i for i, s in enumerate(instance.storages)}
    cat = policy.catalog
    for i in range(cat.n):
        val = float(adj[i])
        if val == 0.0:
            continue
        kind, ent, t = cat.kinds[i], cat.entities[i], int(cat.periods[i]) - 1
        if kind == "dp":
            ki = unit_row[ent]
            sol.p[ki, t] += val
            sol.f[ki, t] += instance.units[ki].phi_p * val
        elif kind == "dq":
            ki = unit_row[ent]
            sol.q[ki, t] += val
            sol.f[ki, t] += instance.units[ki].phi_q * val
        elif kind == "du":
            sol.u[st_row[ent], t] += val
        else:
            sol.s[st_row[ent], t] += val
    return sol


@dataclass
class AuditReport:
    """Feasibility of the adjusted schedules over sampled realizations."""

    n_points: int
    n_robust_rows: int
    max_violation: float
    tol: float
    worst_delta: np.ndarray | None = None
    worst_label: str = ""

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol


def robust_feasibility_audit(tsp: TwoStageProblem, policy: AffinePolicy,
                             uset: BudgetUncertaintySet, n_samples: int = 200,
                             seed: int = 0, tol: float = 1e-6) -> AuditReport:
    """Check the policy on set vertices and random in-set realizations.

    Every sampled deviation is pushed through adjusted_schedule and the
    full constraint audit against the realized demand path; the report
    carries the largest residual found and the realization that caused it.
    """
    instance = tsp.instance
    n = uset.dim
    points = [np.zeros(n)]
    rng = np.random.default_rng(seed)
    gamma = uset.gamma
    try:
        points.extend(enumerate_vertices(uset))
    except UnsupportedSet:
        # too many to enumerate: sample random vertices instead (full budget
        # spent on a random support with random signs)
        k = int(gamma)
        for _ in range(n_samples):
            vert = np.zeros(n)
            support = rng.choice(n, size=min(k, n), replace=False)
            vert[support] = rng.choice([-1.0, 1.0], size=len(support))
            if gamma > k and k < n:
                rest = [j for j in range(n) if j not in set(support)]
                vert[rng.choice(rest)] = rng.choice([-1.0, 1.0]) * (gamma - k)
            points.append(vert)
    for s in range(n_samples):
        raw = rng.uniform(-1.0, 1.0, size=n)
        l1 = np.abs(raw).sum()
        if l1 > gamma:
            raw *= 0.0 if l1 == 0.0 else gamma / l1
        if s % 2 == 1 and np.abs(raw).sum() > 0:
            # push half the draws to the budget boundary
            raw = np.clip(raw * (gamma / np.abs(raw).sum()), -1.0, 1.0)
        points.append(raw)

    d_hat = instance.market.demand_array()
    worst = 0.0
    worst_delta, worst_label = None, ""
    for delta in points:
        adj = adjusted_schedule(instance, policy, delta)
        demand = d_hat + uset.radius * delta
        report = validate_schedule(instance, adj, tol=0.0, demand=demand)
        if report.max_abs > worst:
            worst = report.max_abs
            worst_delta = np.array(delta)
            worst_label = str(max(report.records, key=lambda r: r.residual))
    return AuditReport(n_points=len(points), n_robust_rows=tsp.n_ineq,
                       max_violation=float(worst), tol=tol,
                       worst_delta=worst_delta, worst_label=worst_label)


def write_policy_csv(path, policy: AffinePolicy) -> None:
    """Rule matrices as CSV: one row per recourse column and component."""
    dim = policy.dim
    header = ["name", "component"] + [f"d{j + 1}" for j in range(dim)]
    blocks = ([("Y", policy.Y)] if policy.kind is RuleKind.LINEAR
              else [("Y_plus", policy.Y_plus), ("Y_minus", policy.Y_minus)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for label, mat in blocks:
            for i, name in enumerate(policy.catalog.names):
                writer.writerow([name, label] + [repr(float(v)) for v in mat[i]])


def read_policy_csv(path, catalog: RecourseCatalog) -> AffinePolicy:
    """Inverse of write_policy_csv; first stage is left empty."""
    from .errors import ParseError
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["name", "component"]:
        raise ParseError("policy file lacks the name,component header")
    dim = len(rows[0]) - 2
    mats: dict[str, np.ndarray] = {}
    for num, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 2:
            raise ParseError(f"expected {dim + 2} fields, got {len(row)}", line=num)
        name, label = row[0], row[1]
        if name not in catalog:
            raise ParseError(f"unknown recourse column {name!r}", line=num)
        mat = mats.setdefault(label, np.zeros((catalog.n, dim)))
        try:
            mat[catalog._index[name]] = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=num) from None
    if set(mats) == {"Y"}:
        kind, Y, Yp, Ym = RuleKind.LINEAR, mats["Y"], None, None
    elif set(mats) == {"Y_plus", "Y_minus"}:
        kind, Y = RuleKind.PIECEWISE_LINEAR, None
        Yp, Ym = mats["Y_plus"], mats["Y_minus"]
    else:
        raise ParseError(f"unexpected component set {sorted(mats)}")
    empty = ScheduleSolution(
        v=np.zeros((0, dim), dtype=int), y=np.zeros((0, dim), dtype=int),
        z=np.zeros((0, dim), dtype=int), p=np.zeros((0, dim)),
        q=np.zeros((0, dim)), f=np.zeros((0, dim)),
        u=np.zeros((0, dim)), s=np.zeros((0, dim)))
    return AffinePolicy(kind=kind, first_stage=empty, catalog=catalog,
                        Y=Y, Y_plus=Yp, Y_minus=Ym)
