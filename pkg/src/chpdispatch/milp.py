"""Mixed-integer linear program container, solver drivers and MPS file round-trip.

The model container is solver-agnostic: columns and rows are accumulated by
name, constraints are stored as sparse triplets, and two independent backends
(HiGHS through scipy, GLPK through cvxopt) consume the same canonical form.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import BackendUnavailable, DimensionMismatch, ParseError, SolverError

INF = float("inf")

_SENSES = ("E", "G", "L")


@dataclass
class SolverConfig:
    """Options shared by all backends.

    Attributes:
        backend: "highs" (scipy/HiGHS) or "glpk" (cvxopt/GLPK).
        mip_rel_gap: relative optimality gap at which branch and bound stops.
        time_limit: wall-clock limit in seconds, None for unlimited.
        feasibility_tol: primal feasibility tolerance requested from the backend.
        presolve: whether the backend may presolve.
        row_scale: normalize every row to max-abs coefficient 1 before solving.
        threads: worker threads for the backend (both backends run single-threaded).
        seed: recorded for provenance; both backends are deterministic regardless.
    """

    backend: str = "highs"
    mip_rel_gap: float = 1e-6
    time_limit: float | None = None
    feasibility_tol: float = 1e-7
    presolve: bool = True
    row_scale: bool = True
    threads: int = 1
    seed: int | None = None


@dataclass
class SolveResult:
    """Outcome of one solve.

    status is one of "optimal", "feasible" (stopped early with an incumbent),
    "infeasible", "unbounded", "time_limit", "error".  objective and values are
    None unless an incumbent exists; objective is reported in the model's own
    sense.  gap is the relative MIP gap when the backend provides one.
    """

    status: str
    objective: float | None = None
    values: dict[str, float] | None = None
    gap: float | None = None
    wall_seconds: float = 0.0
    backend: str = ""
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")

    def value_array(self, names: list[str]) -> np.ndarray:
        if self.values is None:
            raise SolverError("no incumbent solution available")
        return np.array([self.values[n] for n in names], dtype=float)


class MILPModel:
    """Sparse MILP in triplet form with named columns and rows.

    Rows carry a sense in {"E", "G", "L"} and a right-hand side; columns carry
    bounds, an integrality flag and an objective coefficient.  Duplicate
    (row, col) entries are summed by canonicalize().
    """

    def __init__(self, name: str = "model", sense: str = "min"):
        if sense not in ("min", "max"):
            raise ValueError(f"objective sense must be 'min' or 'max', got {sense!r}")
        self.name = name
        self.sense = sense
        self.col_names: list[str] = []
        self.col_lb: list[float] = []
        self.col_ub: list[float] = []
        self.col_integer: list[bool] = []
        self.obj: list[float] = []
        self.obj_const: float = 0.0
        self.row_names: list[str] = []
        self.row_sense: list[str] = []
        self.row_rhs: list[float] = []
        self._entries_row: list[int] = []
        self._entries_col: list[int] = []
        self._entries_val: list[float] = []
        self._col_index: dict[str, int] = {}
        self._row_index: dict[str, int] = {}
        self._canonical = True

    # -- construction -----------------------------------------------------

    @property
    def ncols(self) -> int:
        return len(self.col_names)

    @property
    def nrows(self) -> int:
        return len(self.row_names)

    def add_col(self, name: str, lb: float = 0.0, ub: float = INF,
                integer: bool = False, obj: float = 0.0) -> int:
        if name in self._col_index:
            raise ValueError(f"duplicate column name {name!r}")
        if not (lb <= ub):
            raise ValueError(f"column {name!r} has empty bound interval [{lb}, {ub}]")
        self._col_index[name] = self.ncols
        self.col_names.append(name)
        self.col_lb.append(float(lb))
        self.col_ub.append(float(ub))
        self.col_integer.append(bool(integer))
        self.obj.append(float(obj))
        return self.ncols - 1

    def add_row(self, name: str, sense: str, rhs: float, coeffs) -> int:
        """Append one constraint row.

        Args:
            name: unique row name.
            sense: "E", "G" or "L".
            rhs: right-hand side.
            coeffs: iterable of (column index, coefficient) pairs.
        """
        if name in self._row_index:
            raise ValueError(f"duplicate row name {name!r}")
        if sense not in _SENSES:
            raise ValueError(f"row {name!r}: sense must be one of {_SENSES}, got {sense!r}")
        r = self.nrows
        self._row_index[name] = r
        self.row_names.append(name)
        self.row_sense.append(sense)
        self.row_rhs.append(float(rhs))
        for c, v in coeffs:
            if not 0 <= c < self.ncols:
                raise DimensionMismatch(f"row {name!r} references column {c} of {self.ncols}")
            if v != 0.0:
                self._entries_row.append(r)
                self._entries_col.append(c)
                self._entries_val.append(float(v))
        self._canonical = False
        return r

    def add_obj(self, col: int, coef: float) -> None:
        self.obj[col] += float(coef)

    def col(self, name: str) -> int:
        return self._col_index[name]

    def row(self, name: str) -> int:
        return self._row_index[name]

    # -- canonical form ---------------------------------------------------

    def canonicalize(self) -> None:
        """Sum duplicate triplets, drop zeros, sort by (row, col), check finiteness."""
        if self._entries_row:
            mat = sparse.coo_matrix(
                (self._entries_val, (self._entries_row, self._entries_col)),
                shape=(self.nrows, self.ncols))
            mat.sum_duplicates()
            mask = mat.data != 0.0
            order = np.lexsort((mat.col[mask], mat.row[mask]))
            self._entries_row = list(mat.row[mask][order])
            self._entries_col = list(mat.col[mask][order])
            self._entries_val = list(mat.data[mask][order])
        arrays = [self._entries_val, self.obj, self.row_rhs, self.col_lb, self.col_ub]
        for arr in arrays:
            a = np.asarray(arr, dtype=float)
            if a.size and np.isnan(a).any():
                raise ValueError("model contains NaN coefficients")
        for label, arr in (("coefficient", self._entries_val), ("objective", self.obj),
                           ("rhs", self.row_rhs)):
            a = np.asarray(arr, dtype=float)
            if a.size and np.isinf(a).any():
                raise ValueError(f"model contains non-finite {label}s")
        self._canonical = True

    def constraint_matrix(self) -> sparse.csr_matrix:
        if not self._canonical:
            self.canonicalize()
        return sparse.csr_matrix(
            (self._entries_val, (self._entries_row, self._entries_col)),
            shape=(self.nrows, self.ncols))

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._canonical:
            self.canonicalize()
        return (np.asarray(self._entries_row, dtype=int),
                np.asarray(self._entries_col, dtype=int),
                np.asarray(self._entries_val, dtype=float))


def _scaled_rows(model: MILPModel):
    """Return (csr matrix, rhs) with every row divided by its max-abs coefficient."""
    mat = model.constraint_matrix().tocsr()
    rhs = np.asarray(model.row_rhs, dtype=float).copy()
    if mat.nnz:
        absmax = np.zeros(model.nrows)
        mags = np.abs(mat.data)
        for r in range(model.nrows):
            lo, hi = mat.indptr[r], mat.indptr[r + 1]
            if hi > lo:
                absmax[r] = mags[lo:hi].max()
        scale = np.where(absmax > 0, absmax, 1.0)
        diag = sparse.diags(1.0 / scale)
        mat = diag @ mat
        rhs = rhs / scale
    return mat.tocsr(), rhs


def solve(model: MILPModel, config: SolverConfig | None = None) -> SolveResult:
    """Solve a model with the configured backend.

    Returns a SolveResult; infeasible and unbounded outcomes are reported as
    statuses, not exceptions.  The objective is in the model's declared sense.
    """
    config = config or SolverConfig()
    model.canonicalize()
    t0 = time.perf_counter()
    if model.ncols == 0:
        return SolveResult(status="optimal", objective=model.obj_const, values={},
                           gap=0.0, wall_seconds=time.perf_counter() - t0,
                           backend=config.backend)
    if config.backend == "highs":
        result = _solve_highs(model, config)
    elif config.backend == "glpk":
        result = _solve_glpk(model, config)
    else:
        raise BackendUnavailable(f"unknown backend {config.backend!r}")
    result.wall_seconds = time.perf_counter() - t0
    result.backend = config.backend
    return result


def _min_objective(model: MILPModel) -> np.ndarray:
    c = np.asarray(model.obj, dtype=float)
    return -c if model.sense == "max" else c


def _finish(model: MILPModel, status: str, x, message: str = "",
            gap: float | None = None) -> SolveResult:
    if x is None:
        return SolveResult(status=status, message=message, gap=gap)
    x = np.asarray(x, dtype=float)
    cmin = _min_objective(model)
    obj_min = float(cmin @ x) + (model.obj_const if model.sense == "min" else -model.obj_const)
    objective = -obj_min if model.sense == "max" else obj_min
    values = {n: float(v) for n, v in zip(model.col_names, x)}
    return SolveResult(status=status, objective=objective, values=values,
                       gap=gap, message=message)


def _solve_highs(model: MILPModel, config: SolverConfig) -> SolveResult:
    from scipy.optimize import Bounds, LinearConstraint, milp

    if config.row_scale:
        mat, rhs = _scaled_rows(model)
    else:
        mat, rhs = model.constraint_matrix(), np.asarray(model.row_rhs, dtype=float)
    sense = np.asarray(model.row_sense)
    row_lb = np.where(sense == "L", -np.inf, rhs)
    row_ub = np.where(sense == "G", np.inf, rhs)
    constraints = LinearConstraint(mat, row_lb, row_ub) if model.nrows else None
    integrality = np.asarray(model.col_integer, dtype=int)
    bounds = Bounds(np.asarray(model.col_lb), np.asarray(model.col_ub))
    options = {"disp": False, "presolve": config.presolve,
               "mip_rel_gap": config.mip_rel_gap}
    if config.time_limit is not None:
        options["time_limit"] = config.time_limit
    res = milp(c=_min_objective(model), constraints=constraints,
               integrality=integrality, bounds=bounds, options=options)
    gap = getattr(res, "mip_gap", None)
    if res.status == 0:
        return _finish(model, "optimal", res.x, res.message, gap)
    if res.status == 1:
        status = "time_limit" if res.x is None else "feasible"
        return _finish(model, status, res.x, res.message, gap)
    if res.status == 2:
        return SolveResult(status="infeasible", message=res.message)
    if res.status == 3:
        return SolveResult(status="unbounded", message=res.message)
    return SolveResult(status="error", message=res.message)


def _glpk_status(raw: str) -> str:
    if "optimal" in raw:
        return "optimal"
    if "primal infeasible" in raw:
        return "infeasible"
    if "dual infeasible" in raw:
        return "unbounded"
    return "error"


def _solve_glpk(model: MILPModel, config: SolverConfig) -> SolveResult:
    try:
        import cvxopt
        import cvxopt.glpk
    except ImportError as exc:  # pragma: no cover - cvxopt is a declared dependency
        raise BackendUnavailable("cvxopt/GLPK is not importable") from exc

    cvxopt.glpk.options["msg_lev"] = "GLP_MSG_OFF"
    if config.time_limit is not None:
        cvxopt.glpk.options["tm_lim"] = int(config.time_limit * 1000)
    else:
        cvxopt.glpk.options.pop("tm_lim", None)

    if config.row_scale:
        mat, rhs = _scaled_rows(model)
    else:
        mat, rhs = model.constraint_matrix(), np.asarray(model.row_rhs, dtype=float)
    mat = mat.tocoo()
    n = model.ncols
    sense = np.asarray(model.row_sense)

    # GLPK through cvxopt takes G x <= h plus A x = b and no variable bounds,
    # so bounds become extra inequality rows.
    gi, gj, gv, h = [], [], [], []

    def push(cols, vals, rhs_val):
        r = len(h)
        for c, v in zip(cols, vals):
            gi.append(r)
            gj.append(int(c))
            gv.append(float(v))
        h.append(float(rhs_val))

    ai, aj, av, b = [], [], [], []
    rows_cols: dict[int, tuple[list[int], list[float]]] = {}
    for r, c, v in zip(mat.row, mat.col, mat.data):
        rows_cols.setdefault(int(r), ([], []))[0].append(int(c))
        rows_cols[int(r)][1].append(float(v))
    for r in range(model.nrows):
        cols, vals = rows_cols.get(r, ([], []))
        if sense[r] == "L":
            push(cols, vals, rhs[r])
        elif sense[r] == "G":
            push(cols, [-v for v in vals], -rhs[r])
        else:
            re = len(b)
            for c, v in zip(cols, vals):
                ai.append(re)
                aj.append(c)
                av.append(v)
            b.append(float(rhs[r]))
    for j in range(n):
        if model.col_ub[j] < INF:
            push([j], [1.0], model.col_ub[j])
        if model.col_lb[j] > -INF:
            push([j], [-1.0], -model.col_lb[j])
    if not h:
        push([], [], 1.0)  # GLPK needs at least one inequality row

    c_obj = cvxopt.matrix(_min_objective(model))
    G = cvxopt.spmatrix(gv, gi, gj, (len(h), n), tc="d")
    hM = cvxopt.matrix(h, tc="d")
    A = cvxopt.spmatrix(av, ai, aj, (len(b), n), tc="d") if b else None
    bM = cvxopt.matrix(b, tc="d") if b else None
    integers = {j for j in range(n) if model.col_integer[j]}

    if integers:
        if A is not None:
            raw, x = cvxopt.glpk.ilp(c_obj, G, hM, A, bM, I=integers, B=set())
        else:
            raw, x = cvxopt.glpk.ilp(c_obj, G, hM, I=integers, B=set())
        if "relaxation" in raw and "infeasible" in raw:
            return SolveResult(status="infeasible", message=raw)
    else:
        if A is not None:
            out = cvxopt.glpk.lp(c_obj, G, hM, A, bM)
        else:
            out = cvxopt.glpk.lp(c_obj, G, hM)
        raw, x = out[0], out[1]
    status = _glpk_status(raw)
    if status != "optimal" or x is None:
        return SolveResult(status=status if x is None else status, message=raw)
    return _finish(model, "optimal", list(x), raw, 0.0)


# -- MPS round-trip -------------------------------------------------------

_OBJ_ROW = "OBJ"


def _mps_value(v: float) -> str:
    s = f"{v:.15g}"
    return s


def _short_names(prefix: str, count: int) -> list[str]:
    return [f"{prefix}{i:07d}" for i in range(1, count + 1)]


def write_mps(model: MILPModel, path: str) -> None:
    """Write a fixed-format MPS file with deterministic bytes.

    Names longer than the 8-character fixed-format fields are replaced with
    R#######/C####### aliases; the original names are preserved in comment
    lines so the companion reader restores them.
    """
    model.canonicalize()
    rnames = _short_names("R", model.nrows)
    cnames = _short_names("C", model.ncols)
    lines: list[str] = []
    lines.append(f"* fixed-format MPS written by chpdispatch")
    for alias, orig in zip(rnames, model.row_names):
        lines.append(f"* ROWNAME {alias} {orig}")
    for alias, orig in zip(cnames, model.col_names):
        lines.append(f"* COLNAME {alias} {orig}")
    lines.append(f"NAME          {model.name[:60]}")
    lines.append("OBJSENSE")
    lines.append(f"    {'MAXIMIZE' if model.sense == 'max' else 'MINIMIZE'}")
    lines.append("ROWS")
    lines.append(f" N  {_OBJ_ROW}")
    for alias, s in zip(rnames, model.row_sense):
        lines.append(f" {s}  {alias}")
    lines.append("COLUMNS")
    rows_by_col: dict[int, list[tuple[int, float]]] = {}
    tr, tc, tv = model.triplets()
    for r, c, v in zip(tr, tc, tv):
        rows_by_col.setdefault(int(c), []).append((int(r), float(v)))
    in_int = False
    marker = 0
    for j in range(model.ncols):
        want_int = model.col_integer[j]
        if want_int != in_int:
            marker += 1
            kind = "'INTORG'" if want_int else "'INTEND'"
            lines.append(f"    M{marker:<7d}  'MARKER'                 {kind}")
            in_int = want_int
        entries = []
        if model.obj[j] != 0.0:
            entries.append((_OBJ_ROW, model.obj[j]))
        for r, v in rows_by_col.get(j, []):
            entries.append((rnames[r], v))
        if not entries:
            entries.append((_OBJ_ROW, 0.0))
        for rn, v in entries:
            lines.append(f"    {cnames[j]:<8}  {rn:<8}  {_mps_value(v)}")
    if in_int:
        marker += 1
        lines.append(f"    M{marker:<7d}  'MARKER'                 'INTEND'")
    lines.append("RHS")
    for alias, rhs in zip(rnames, model.row_rhs):
        if rhs != 0.0:
            lines.append(f"    RHS       {alias:<8}  {_mps_value(rhs)}")
    lines.append("BOUNDS")
    for j in range(model.ncols):
        lb, ub = model.col_lb[j], model.col_ub[j]
        cn = cnames[j]
        if lb == ub:
            lines.append(f" FX BND       {cn:<8}  {_mps_value(lb)}")
            continue
        if lb == -INF:
            lines.append(f" MI BND       {cn:<8}")
        else:
            lines.append(f" LO BND       {cn:<8}  {_mps_value(lb)}")
        if ub == INF:
            lines.append(f" PL BND       {cn:<8}")
        else:
            lines.append(f" UP BND       {cn:<8}  {_mps_value(ub)}")
    lines.append("ENDATA")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mps(path: str) -> MILPModel:
    """Read a file produced by write_mps back into a MILPModel."""
    row_alias: dict[str, str] = {}
    col_alias: dict[str, str] = {}
    section = None
    sense = "min"
    name = "model"
    row_defs: list[tuple[str, str]] = []  # (sense, alias)
    col_order: list[str] = []
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_int: dict[str, bool] = {}
    rhs_map: dict[str, float] = {}
    bounds: dict[str, list[tuple[str, float | None]]] = {}
    in_int = False
    expect_objsense = False

    with open(path) as fh:
        for lineno, rawline in enumerate(fh, start=1):
            line = rawline.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("*"):
                parts = line.split()
                if len(parts) >= 4 and parts[1] == "ROWNAME":
                    row_alias[parts[2]] = " ".join(parts[3:])
                elif len(parts) >= 4 and parts[1] == "COLNAME":
                    col_alias[parts[2]] = " ".join(parts[3:])
                continue
            if not line.startswith(" "):
                parts = line.split()
                keyword = parts[0]
                if keyword == "NAME":
                    name = parts[1] if len(parts) > 1 else "model"
                    section = None
                elif keyword == "OBJSENSE":
                    expect_objsense = True
                    section = None
                elif keyword in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES"):
                    section = keyword
                    expect_objsense = False
                elif keyword == "ENDATA":
                    section = None
                else:
                    raise ParseError(f"unknown MPS section {keyword!r}", line=lineno)
                continue
            parts = line.split()
            if expect_objsense:
                sense = "max" if parts[0].upper().startswith("MAX") else "min"
                expect_objsense = False
                continue
            if section == "ROWS":
                if len(parts) != 2:
                    raise ParseError("ROWS line needs sense and name", line=lineno)
                s, rn = parts
                if s == "N":
                    continue
                if s not in _SENSES:
                    raise ParseError(f"bad row sense {s!r}", line=lineno)
                row_defs.append((s, rn))
            elif section == "COLUMNS":
                if "'MARKER'" in parts:
                    if "'INTORG'" in parts:
                        in_int = True
                    elif "'INTEND'" in parts:
                        in_int = False
                    else:
                        raise ParseError("marker line without INTORG/INTEND", line=lineno)
                    continue
                if len(parts) not in (3, 5):
                    raise ParseError("COLUMNS line needs name/row/value groups", line=lineno)
                cn = parts[0]
                if cn not in col_entries:
                    col_entries[cn] = []
                    col_order.append(cn)
                    col_int[cn] = in_int
                for k in range(1, len(parts), 2):
                    try:
                        col_entries[cn].append((parts[k], float(parts[k + 1])))
                    except ValueError as exc:
                        raise ParseError(str(exc), line=lineno) from exc
            elif section == "RHS":
                for k in range(1, len(parts), 2):
                    try:
                        rhs_map[parts[k]] = float(parts[k + 1])
                    except ValueError as exc:
                        raise ParseError(str(exc), line=lineno) from exc
            elif section == "BOUNDS":
                btype, cn = parts[0], parts[2]
                val = float(parts[3]) if len(parts) > 3 else None
                bounds.setdefault(cn, []).append((btype, val))
            elif section == "RANGES":
                raise ParseError("RANGES section is not supported", line=lineno)
            else:
                raise ParseError("data line outside any section", line=lineno)

    model = MILPModel(name=name, sense=sense)
    col_idx: dict[str, int] = {}
    for cn in col_order:
        lb, ub = 0.0, INF
        for btype, val in bounds.get(cn, []):
            if btype == "FX":
                lb = ub = val
            elif btype == "LO":
                lb = val
            elif btype == "UP":
                ub = val
            elif btype == "MI":
                lb = -INF
            elif btype == "PL":
                ub = INF
            elif btype == "BV":
                lb, ub = 0.0, 1.0
            else:
                raise ParseError(f"unsupported bound type {btype!r}")
        obj = sum(v for rn, v in col_entries[cn] if rn == _OBJ_ROW)
        col_idx[cn] = model.add_col(col_alias.get(cn, cn), lb=lb, ub=ub,
                                    integer=col_int[cn], obj=obj)
    by_row: dict[str, list[tuple[int, float]]] = {}
    for cn in col_order:
        for rname, v in col_entries[cn]:
            if rname != _OBJ_ROW:
                by_row.setdefault(rname, []).append((col_idx[cn], v))
    for s, rn in row_defs:
        model.add_row(row_alias.get(rn, rn), s, rhs_map.get(rn, 0.0), by_row.get(rn, []))
    model.canonicalize()
    return model
