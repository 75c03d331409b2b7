"""Shared test utilities: random well-posed instances and brute-force oracles."""

import copy
import itertools

import numpy as np

from chpdispatch.milp import SolverConfig, solve
from chpdispatch.system import (
    MarketSeries,
    StorageSpec,
    SystemInstance,
    UnitKind,
    UnitSpec,
    build_deterministic_milp,
)


def random_small_instance(rng, T=3, n_extra_units=1, with_storage=True,
                          flexible_extras=None):
    """A random feasible portfolio: one big always-dispatchable heat-only unit
    plus up to two random units and an optional storage.

    The anchor unit alone covers peak demand with a free ramp, so the MILP
    always has a feasible schedule regardless of the other units' timing
    constraints.
    """
    demand = rng.uniform(12.0, 55.0, size=T).round(2)
    price = rng.uniform(5.0, 60.0, size=T).round(2)
    peak = float(demand.max())

    units = []
    q_anchor = peak * 1.6
    units.append(UnitSpec(
        name="ANCH", kind=UnitKind.HEAT_ONLY, phi_q=round(rng.uniform(0.9, 1.3), 2),
        f_min=0.0, f_max=round(q_anchor * 1.5, 2), r_up=1e4, r_dn=1e4,
        q_min=0.0, q_max=round(q_anchor, 2),
        c_fuel=round(rng.uniform(4.0, 9.0), 2), c_onl=round(rng.uniform(0.0, 15.0), 2),
        t_up=0, t_dn=0, v_init=1, f_init=round(rng.uniform(0.0, 10.0), 2),
        flexible=True))

    for i in range(n_extra_units):
        kind = rng.choice([UnitKind.BACK_PRESSURE, UnitKind.EXTRACTION,
                           UnitKind.HEAT_ONLY])
        flexible = (bool(rng.random() < 0.6) if flexible_extras is None
                    else bool(flexible_extras))
        q_max = round(rng.uniform(0.4, 0.9) * peak, 2)
        q_min = round(rng.uniform(0.0, 0.15) * q_max, 2)
        v_init = int(rng.random() < 0.5)
        t_up = int(rng.integers(0, 3))
        t_dn = int(rng.integers(0, 3))
        common = dict(
            q_min=q_min, q_max=q_max,
            c_fuel=round(rng.uniform(1.0, 6.0), 2),
            c_onl=round(rng.uniform(0.0, 8.0), 2),
            c_su=round(rng.uniform(0.0, 60.0), 2),
            c_sd=round(rng.uniform(0.0, 60.0), 2),
            t_up=t_up, t_dn=t_dn, v_init=v_init, flexible=flexible)
        if kind is UnitKind.HEAT_ONLY:
            phi_q = round(rng.uniform(0.9, 1.4), 2)
            f_max = round(phi_q * q_max * rng.uniform(1.0, 1.3), 2)
            f_min = round(rng.uniform(0.0, 0.3) * phi_q * max(q_min, 1.0), 2)
            ramp = round(rng.uniform(0.6, 1.5) * f_max, 2)
            f_init = round(v_init * min(f_max, max(f_min, 0.3 * f_max)), 2)
            units.append(UnitSpec(
                name=f"U{i}", kind=kind, phi_q=phi_q, f_min=f_min, f_max=f_max,
                r_up=ramp, r_dn=ramp, f_init=f_init, **common))
        else:
            r_b = round(rng.uniform(0.3, 0.8), 2)
            phi_p = round(rng.uniform(1.5, 2.8), 2)
            phi_q = round(rng.uniform(0.2, 0.5), 2)
            p_min = round(r_b * q_min, 4)
            p_max = round(r_b * q_max, 4) if kind is UnitKind.BACK_PRESSURE \
                else round(r_b * q_max * rng.uniform(1.0, 1.4), 2)
            f_max = round(phi_p * p_max + phi_q * q_max * rng.uniform(0.5, 1.0), 2)
            f_min = round(min(phi_p * p_min, f_max) * rng.uniform(0.2, 0.9), 2)
            ramp = round(rng.uniform(0.7, 1.6) * f_max, 2)
            f_init = round(v_init * min(max(f_min, 0.4 * f_max), f_max), 2)
            units.append(UnitSpec(
                name=f"U{i}", kind=kind, r_b=r_b, phi_p=phi_p, phi_q=phi_q,
                f_min=f_min, f_max=f_max, r_up=ramp, r_dn=ramp,
                p_min=p_min, p_max=p_max, f_init=f_init, **common))

    storages = ()
    if with_storage:
        s_max = round(rng.uniform(8.0, 30.0), 2)
        u_cap = round(rng.uniform(3.0, 10.0), 2)
        storages = (StorageSpec(name="ST", s_max=s_max, u_min=-u_cap, u_max=u_cap,
                                s_init=round(s_max * rng.uniform(0.3, 0.7), 2)),)

    market = MarketSeries(price=tuple(price), demand=tuple(demand))
    return SystemInstance(units=tuple(units), storages=storages, market=market)


def _pattern_feasible(unit, v):
    """Check commitment logic constraints of one on/off pattern."""
    T = len(v)
    if unit.t_up0 > 0 and any(x == 0 for x in v[:min(unit.t_up0, T)]):
        return False
    if unit.t_dn0 > 0 and any(x == 1 for x in v[:min(unit.t_dn0, T)]):
        return False
    prev = unit.v_init
    for t in range(T):
        if v[t] == 1 and prev == 0:  # start-up: stay on t_up periods
            for tau in range(t, min(t + unit.t_up, T)):
                if v[tau] == 0:
                    return False
        if v[t] == 0 and prev == 1:  # shut-down: stay off t_dn periods
            for tau in range(t, min(t + unit.t_dn, T)):
                if v[tau] == 1:
                    return False
        prev = v[t]
    return True


def solve_by_enumeration(instance):
    """Brute-force optimum: try every commitment pattern, solve the dispatch LP.

    Returns the best objective over all feasible patterns (None if every
    pattern is infeasible).  Intended for n_units <= 2-3 and T <= 4.
    """
    T = instance.horizon
    base = build_deterministic_milp(instance)
    best = None
    patterns = itertools.product(*[itertools.product((0, 1), repeat=T)
                                   for _ in instance.units])
    for pattern in patterns:
        if not all(_pattern_feasible(u, v) for u, v in zip(instance.units, pattern)):
            continue
        m = copy.deepcopy(base)
        for unit, v in zip(instance.units, pattern):
            prev = unit.v_init
            for t in range(1, T + 1):
                y = 1 if (v[t - 1] == 1 and prev == 0) else 0
                z = 1 if (v[t - 1] == 0 and prev == 1) else 0
                for blk, val in (("v", v[t - 1]), ("y", y), ("z", z)):
                    j = m.col(f"{blk}[{unit.name},{t}]")
                    m.col_lb[j] = m.col_ub[j] = float(val)
                prev = v[t - 1]
        res = solve(m, SolverConfig(mip_rel_gap=1e-9))
        if res.status == "optimal" and (best is None or res.objective > best):
            best = res.objective
    return best


def polytope_vertices_bruteforce(A, b, tol=1e-7):
    """All vertices of {x : A x >= b} by basis enumeration.

    Solves every d-row subsystem, keeps feasible solutions, dedupes.  Only
    for tiny polyhedra (C(rows, d) subsets).  The polyhedron must be bounded
    for the result to be its full vertex set.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, d = A.shape
    seen = {}
    for rows in itertools.combinations(range(m), d):
        sub = A[list(rows)]
        try:
            x = np.linalg.solve(sub, b[list(rows)])
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(x)):
            continue
        if np.abs(sub @ x - b[list(rows)]).max() > 1e-9:
            continue  # ill-conditioned basis
        if (A @ x - b).min() >= -tol:
            seen[tuple(np.round(x, 8) + 0.0)] = x
    return np.array(list(seen.values())) if seen else np.zeros((0, d))


def budget_halfspaces(dim, gamma):
    """The budget set in delta coordinates as A x >= b rows.

    Box rows +-delta_i >= -1 and the 1-norm cap as one row per sign pattern:
    -s.delta >= -gamma for every s in {-1, 1}^dim.
    """
    rows = []
    rhs = []
    eye = np.eye(dim)
    for i in range(dim):
        rows.append(-eye[i])
        rhs.append(-1.0)
        rows.append(eye[i])
        rhs.append(-1.0)
    for signs in itertools.product((1.0, -1.0), repeat=dim):
        rows.append(-np.asarray(signs))
        rhs.append(-gamma)
    return np.array(rows), np.array(rhs)


def vertex_sets_equal(V1, V2, decimals=7):
    """Compare two vertex arrays as sets of rounded tuples."""
    s1 = {tuple(np.round(v, decimals) + 0.0) for v in V1}
    s2 = {tuple(np.round(v, decimals) + 0.0) for v in V2}
    return s1 == s2
