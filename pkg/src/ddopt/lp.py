"""Dense two-phase simplex and best-first branch-and-bound.

Sized for desk-scale models (up to a few thousand columns after
reformulation). Pricing is Dantzig's rule until the objective stalls, then
Bland's rule for the rest of the solve, which guarantees termination on
degenerate problems. Ratio-test ties go to the lowest basic index.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

PIVOT_TOL = 1e-9
COST_TOL = 1e-9
FEAS_TOL = 1e-7
INT_TOL = 1e-6
STALL_PIVOTS = 50


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"
    NODE_LIMIT = "NodeLimit"


@dataclass
class ConcreteLP:
    """``sense c.x + c0`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``lb <= x <= ub``.

    The first ``n_decisions`` columns are the original decision entries;
    any further columns are auxiliaries introduced by a reformulation.
    """
    sense: str
    c: np.ndarray
    c0: float = 0.0
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    integer: np.ndarray | None = None
    names: list[str] | None = None
    n_decisions: int | None = None
    ub_labels: list[str] | None = None
    eq_labels: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.c0 = float(self.c0)
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).copy()
        self.integer = np.zeros(n, dtype=bool) if self.integer is None else np.asarray(self.integer, dtype=bool).copy()
        if self.names is None:
            self.names = [f"x{j}" for j in range(n)]
        if self.n_decisions is None:
            self.n_decisions = n
        if self.ub_labels is None:
            self.ub_labels = [f"r{i}" for i in range(self.A_ub.shape[0])]
        if self.eq_labels is None:
            self.eq_labels = [f"e{i}" for i in range(self.A_eq.shape[0])]
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("row/rhs count mismatch")
        for arr in (self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP data must be finite")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(self.c @ x + self.c0)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        parts = [0.0]
        if self.A_ub.size:
            parts.append(np.max(self.A_ub @ x - self.b_ub))
        if self.A_eq.size:
            parts.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        parts.append(np.max(self.lb - x, initial=0.0))
        parts.append(np.max(x - self.ub, initial=0.0))
        return float(max(parts))

    def with_bounds(self, lb, ub) -> "ConcreteLP":
        return ConcreteLP(self.sense, self.c, self.c0, self.A_ub, self.b_ub, self.A_eq, self.b_eq,
                          lb, ub, self.integer, self.names, self.n_decisions,
                          self.ub_labels, self.eq_labels)


@dataclass
class LPSolution:
    status: Status
    x: np.ndarray | None = None
    objective: float | None = None
    y_ub: np.ndarray | None = None  # duals of the min-form problem
    y_eq: np.ndarray | None = None
    pivots: int = 0
    nodes: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


class IterationLimit(Exception):
    pass


# --- standard form -------------------------------------------------------------

@dataclass
class _Standard:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c0: float
    n_struct: int
    recover: list          # per original var: ("shift", col, lb) | ("flip", col, ub) | ("free", c+, c-)
    row_kind: list         # ("ub", i) | ("eq", i) | ("bound", j)
    row_sign: np.ndarray
    slack_of_row: dict


def _standardize(lp: ConcreteLP, cost: np.ndarray) -> _Standard:
    n = lp.n
    cols = []          # columns expressed as (orig var, sign)
    recover = []
    shift = np.zeros(n)
    bound_rows = []
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isfinite(lo):
            recover.append(("shift", len(cols), lo))
            cols.append((j, 1.0))
            shift[j] = lo
            if np.isfinite(hi):
                bound_rows.append((j, len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            recover.append(("flip", len(cols), hi))
            cols.append((j, -1.0))
            shift[j] = hi
        else:
            recover.append(("free", len(cols), len(cols) + 1))
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ns = len(cols)
    T = np.zeros((n, ns))
    for k, (j, sgn) in enumerate(cols):
        T[j, k] = sgn
    c_std = cost @ T
    c0 = float(cost @ shift)

    m_ub, m_eq, m_b = lp.A_ub.shape[0], lp.A_eq.shape[0], len(bound_rows)
    m = m_ub + m_eq + m_b
    n_slack = m_ub + m_b
    A = np.zeros((m, ns + n_slack))
    b = np.zeros(m)
    row_kind = []
    slack_of_row = {}
    if m_ub:
        A[:m_ub, :ns] = lp.A_ub @ T
        b[:m_ub] = lp.b_ub - lp.A_ub @ shift
        A[np.arange(m_ub), ns + np.arange(m_ub)] = 1.0
        for i in range(m_ub):
            row_kind.append(("ub", i))
            slack_of_row[i] = ns + i
    if m_eq:
        A[m_ub:m_ub + m_eq, :ns] = lp.A_eq @ T
        b[m_ub:m_ub + m_eq] = lp.b_eq - lp.A_eq @ shift
        row_kind += [("eq", i) for i in range(m_eq)]
    for t, (j, k, width) in enumerate(bound_rows):
        r = m_ub + m_eq + t
        A[r, k] = 1.0
        A[r, ns + m_ub + t] = 1.0
        b[r] = width
        row_kind.append(("bound", j))
        slack_of_row[r] = ns + m_ub + t
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b *= sign
    c_full = np.concatenate([c_std, np.zeros(n_slack)])
    return _Standard(A, b, c_full, c0, ns, recover, row_kind, sign, slack_of_row)


# --- tableau simplex -----------------------------------------------------------

class _Tableau:
    def __init__(self, A, b, basis, max_pivots):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = list(basis)
        self.pivots = 0
        self.max_pivots = max_pivots

    def set_cost(self, c):
        m = len(self.basis)
        self.T[m, :-1] = c
        self.T[m, -1] = 0.0
        for r, j in enumerate(self.basis):
            if self.T[m, j] != 0.0:
                self.T[m] -= self.T[m, j] * self.T[r]

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self.pivots += 1

    def run(self, allowed: np.ndarray) -> str:
        """Minimize the current cost row over columns in ``allowed``."""
        m = len(self.basis)
        bland = False
        best = math.inf
        stall = 0
        while True:
            d = self.T[m, :-1]
            cand = np.flatnonzero(allowed & (d < -COST_TOL))
            if cand.size == 0:
                return "optimal"
            if self.pivots >= self.max_pivots:
                raise IterationLimit(f"pivot cap {self.max_pivots} reached")
            j = cand[0] if bland else cand[np.argmin(d[cand])]
            col = self.T[:m, j]
            pos = np.flatnonzero(col > PIVOT_TOL)
            if pos.size == 0:
                return "unbounded"
            ratios = self.T[pos, -1] / col[pos]
            rmin = ratios.min()
            ties = pos[ratios <= rmin + PIVOT_TOL * max(1.0, abs(rmin))]
            r = min(ties, key=lambda i: self.basis[i])
            self.pivot(r, j)
            obj = -self.T[m, -1]
            if obj < best - COST_TOL * max(1.0, abs(best) if math.isfinite(best) else 1.0):
                best = obj
                stall = 0
            else:
                stall += 1
                if stall >= STALL_PIVOTS:
                    bland = True


def solve_lp(lp: ConcreteLP, max_pivots: int = 50_000) -> LPSolution:
    """Solve an LP relaxation (integrality flags are ignored)."""
    cost = lp.c if lp.sense == "min" else -lp.c
    st = _standardize(lp, cost)
    m, n = st.A.shape
    if m == 0:
        if np.any(st.c < -COST_TOL):
            return LPSolution(Status.UNBOUNDED)
        z = np.zeros(n)
        return _finish(lp, st, z, [], 0)

    basis = []
    art_rows = []
    for r in range(m):
        s = st.slack_of_row.get(r)
        if s is not None and st.row_sign[r] > 0:
            basis.append(s)
        else:
            basis.append(n + len(art_rows))
            art_rows.append(r)
    n_art = len(art_rows)
    A1 = np.zeros((m, n + n_art))
    A1[:, :n] = st.A
    for k, r in enumerate(art_rows):
        A1[r, n + k] = 1.0
    tab = _Tableau(A1, st.b, basis, max_pivots)
    try:
        if n_art:
            c1 = np.zeros(n + n_art)
            c1[n:] = 1.0
            tab.set_cost(c1)
            tab.run(np.ones(n + n_art, dtype=bool))
            infeas = -tab.T[m, -1]
            if infeas > FEAS_TOL * max(1.0, np.abs(st.b).max()):
                return LPSolution(Status.INFEASIBLE, pivots=tab.pivots)
            _drive_out_artificials(tab, n)
        tab.set_cost(np.concatenate([st.c, np.zeros(tab.T.shape[1] - 1 - n)]))
        allowed = np.zeros(tab.T.shape[1] - 1, dtype=bool)
        allowed[:n] = True
        status = tab.run(allowed)
    except IterationLimit:
        return LPSolution(Status.ITERATION_LIMIT, pivots=tab.pivots)
    if status == "unbounded":
        return LPSolution(Status.UNBOUNDED, pivots=tab.pivots)
    z = np.zeros(n)
    rows = tab.keep_rows if hasattr(tab, "keep_rows") else list(range(m))
    basis = tab.basis
    # refine the basic solution against the original data
    B = st.A[np.ix_(rows, basis)]
    try:
        zb = np.linalg.solve(B, st.b[rows])
    except np.linalg.LinAlgError:
        zb = tab.T[:len(basis), -1]
    z[basis] = np.maximum(zb, 0.0) if np.all(zb > -FEAS_TOL) else zb
    sol = _finish(lp, st, z, basis, tab.pivots, rows=rows, B=B)
    return sol


def _drive_out_artificials(tab: _Tableau, n: int):
    """Pivot zero-level artificials out of the basis; drop redundant rows."""
    m = len(tab.basis)
    keep = list(range(m))
    r = 0
    drop = []
    for r in range(m):
        j = tab.basis[r]
        if j < n:
            continue
        row = tab.T[r, :n]
        cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
        if cand.size:
            tab.pivot(r, cand[0])
        else:
            drop.append(r)
    if drop:
        mask = np.ones(m + 1, dtype=bool)
        mask[drop] = False
        tab.T = tab.T[mask]
        tab.basis = [j for i, j in enumerate(tab.basis) if i not in drop]
        keep = [i for i in keep if i not in drop]
    tab.T = np.delete(tab.T, np.s_[n:tab.T.shape[1] - 1], axis=1)
    tab.keep_rows = keep


def _finish(lp, st, z, basis, pivots, rows=None, B=None) -> LPSolution:
    x = np.zeros(lp.n)
    for j, rec in enumerate(st.recover):
        if rec[0] == "shift":
            x[j] = rec[2] + z[rec[1]]
        elif rec[0] == "flip":
            x[j] = rec[2] - z[rec[1]]
        else:
            x[j] = z[rec[1]] - z[rec[2]]
    y_ub = np.zeros(lp.A_ub.shape[0])
    y_eq = np.zeros(lp.A_eq.shape[0])
    if basis:
        y = np.linalg.solve(B.T, st.c[basis])
        for yr, r in zip(y, rows):
            kind, i = st.row_kind[r]
            val = yr * st.row_sign[r]
            if kind == "ub":
                y_ub[i] = val
            elif kind == "eq":
                y_eq[i] = val
    return LPSolution(Status.OPTIMAL, x=x, objective=lp.objective(x), y_ub=y_ub, y_eq=y_eq,
                      pivots=pivots)


def dual_gap(lp: ConcreteLP, sol: LPSolution, tol: float = 1e-6) -> tuple[float, float]:
    """Return (dual infeasibility, |primal - dual|) for the min-form problem.

    Dual of ``min c.x, A_ub x <= b_ub, A_eq x = b_eq, lb <= x <= ub`` is
    ``max b_ub.y + b_eq.w + lb.r+ - ub.r-`` with ``y <= 0`` and
    ``r = c - A_ub'y - A_eq'w`` split into parts paid by finite bounds.
    """
    c = lp.c if lp.sense == "min" else -lp.c
    y, w = sol.y_ub, sol.y_eq
    r = c - lp.A_ub.T @ y - lp.A_eq.T @ w
    infeas = max(0.0, float(np.max(y, initial=0.0)))
    pos = np.maximum(r, 0.0)
    neg = np.maximum(-r, 0.0)
    infeas = max(infeas, float(np.max(np.where(np.isfinite(lp.lb), 0.0, pos), initial=0.0)))
    infeas = max(infeas, float(np.max(np.where(np.isfinite(lp.ub), 0.0, neg), initial=0.0)))
    lbf = np.where(np.isfinite(lp.lb), lp.lb, 0.0)
    ubf = np.where(np.isfinite(lp.ub), lp.ub, 0.0)
    dual_obj = float(lp.b_ub @ y + lp.b_eq @ w + lbf @ pos - ubf @ neg)
    primal = float(c @ sol.x)
    return infeas, abs(primal - dual_obj)


# --- branch and bound ----------------------------------------------------------

def _improves(value: float, incumbent: float) -> bool:
    if not math.isfinite(incumbent):
        return True
    return value < incumbent - 1e-9 * max(1.0, abs(incumbent))


def solve_milp(lp: ConcreteLP, max_nodes: int = 10_000, max_pivots: int = 50_000) -> LPSolution:
    """Best-first branch-and-bound on the most fractional variable."""
    if not lp.integer.any():
        return solve_lp(lp, max_pivots)
    sgn = 1.0 if lp.sense == "min" else -1.0
    lb0 = lp.lb.copy()
    ub0 = lp.ub.copy()
    ints = lp.integer
    lb0[ints] = np.ceil(lb0[ints] - INT_TOL)
    ub0[ints] = np.floor(ub0[ints] + INT_TOL)
    if np.any(lb0 > ub0):
        return LPSolution(Status.INFEASIBLE)
    counter = 0
    heap = []
    best_x = None
    best_val = math.inf
    nodes = 0
    pivots = 0
    root = solve_lp(lp.with_bounds(lb0, ub0), max_pivots)
    pivots += root.pivots
    nodes += 1
    if root.status != Status.OPTIMAL:
        root.nodes = nodes
        return root
    heapq.heappush(heap, (sgn * root.objective, counter, lb0, ub0, root))
    while heap:
        bound, _, lo, hi, sol = heapq.heappop(heap)
        if not _improves(bound, best_val):
            continue
        frac = np.abs(sol.x - np.rint(sol.x))
        frac[~ints] = 0.0
        if frac.max() <= INT_TOL:
            x = sol.x.copy()
            x[ints] = np.rint(x[ints])
            best_x, best_val = x, bound
            continue
        # most fractional, lowest index on ties
        dist = np.where(ints, np.abs(sol.x - np.floor(sol.x) - 0.5), np.inf)
        j = int(np.argmin(dist))
        v = sol.x[j]
        for side in ("down", "up"):
            clo, chi = lo.copy(), hi.copy()
            if side == "down":
                chi[j] = math.floor(v)
            else:
                clo[j] = math.ceil(v)
            if clo[j] > chi[j]:
                continue
            if nodes >= max_nodes:
                out = LPSolution(Status.NODE_LIMIT, nodes=nodes, pivots=pivots)
                if best_x is not None:
                    out.x, out.objective = best_x, lp.objective(best_x)
                return out
            child = solve_lp(lp.with_bounds(clo, chi), max_pivots)
            nodes += 1
            pivots += child.pivots
            if child.status == Status.OPTIMAL:
                cb = sgn * child.objective
                if _improves(cb, best_val):
                    counter += 1
                    heapq.heappush(heap, (cb, counter, clo, chi, child))
            elif child.status == Status.UNBOUNDED:
                return LPSolution(Status.UNBOUNDED, nodes=nodes, pivots=pivots)
    if best_x is None:
        return LPSolution(Status.INFEASIBLE, nodes=nodes, pivots=pivots)
    return LPSolution(Status.OPTIMAL, x=best_x, objective=lp.objective(best_x),
                      nodes=nodes, pivots=pivots)


def solve(lp: ConcreteLP, **kw) -> LPSolution:
    return solve_milp(lp, **kw) if lp.integer.any() else solve_lp(lp, **kw)


# --- MPS export ----------------------------------------------------------------

def _num(v: float) -> str:
    return f"{v:.12g}"


def to_mps(lp: ConcreteLP, name: str = "MODEL") -> str:
    """Fixed-form MPS text. A max problem is written as min of the negation."""
    c = lp.c if lp.sense == "min" else -lp.c
    cols = [f"C{j}" for j in range(lp.n)]
    rows = [f"L{i}" for i in range(lp.A_ub.shape[0])] + [f"E{i}" for i in range(lp.A_eq.shape[0])]
    out = [f"{'NAME':<14}{name[:8]}", "ROWS", " N  COST"]
    out += [f" L  {r}" for r in rows if r[0] == "L"]
    out += [f" E  {r}" for r in rows if r[0] == "E"]
    out.append("COLUMNS")
    A = np.vstack([lp.A_ub, lp.A_eq]) if rows else np.zeros((0, lp.n))
    in_int = False
    for j in range(lp.n):
        if lp.integer[j] != in_int:
            marker = "'INTORG'" if lp.integer[j] else "'INTEND'"
            out.append(f"    {'MARKER':<8}  {'':<8}  {marker:<12}")
            in_int = bool(lp.integer[j])
        entries = [("COST", c[j])] if c[j] != 0 else []
        entries += [(rows[i], A[i, j]) for i in np.flatnonzero(A[:, j])]
        if not entries:
            entries = [("COST", 0.0)]
        for rname, v in entries:
            out.append(f"    {cols[j]:<8}  {rname:<8}  {_num(v):>12}")
    if in_int:
        out.append(f"    {'MARKER':<8}  {'':<8}  {chr(39) + 'INTEND' + chr(39):<12}")
    out.append("RHS")
    rhs = np.concatenate([lp.b_ub, lp.b_eq])
    for i in np.flatnonzero(rhs):
        out.append(f"    {'RHS':<8}  {rows[i]:<8}  {_num(rhs[i]):>12}")
    if lp.c0:
        out.append(f"    {'RHS':<8}  {'COST':<8}  {_num(-lp.c0 if lp.sense == 'min' else lp.c0):>12}")
    out.append("BOUNDS")
    for j in range(lp.n):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            out.append(f" FX {'BND':<8}  {cols[j]:<8}  {_num(lo):>12}")
            continue
        if not np.isfinite(lo):
            out.append(f" MI {'BND':<8}  {cols[j]:<8}")
        elif lo != 0:
            out.append(f" LO {'BND':<8}  {cols[j]:<8}  {_num(lo):>12}")
        if np.isfinite(hi):
            out.append(f" UP {'BND':<8}  {cols[j]:<8}  {_num(hi):>12}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"
