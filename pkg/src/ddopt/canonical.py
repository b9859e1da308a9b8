"""Lowering of truth expressions to a bi-affine linear model.

Every intermediate value is a tensor whose entries are bi-affine forms in
the flattened decision vector ``x`` (length ``nx``) and the flattened
uncertain-parameter vector ``p`` (length ``np_``)::

    v = const + P.p + X.x + p' B x

Entries are stored as rows of one sparse matrix over the monomial basis
``[1, p_0.., x_0.., p_0 x_0, p_0 x_1, ..]``. Operators combine these rows
exactly; any product that would leave the bi-affine class is rejected with
an error naming the offending expression.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import expr
from .bundle import TruthSpec
from .lp import ConcreteLP


class LoweringError(Exception):
    def __init__(self, origin: str | None = None, detail: str = ""):
        self.origin = origin
        self.detail = detail
        super().__init__(f"{type(self).__name__} in {origin or '?'}"
                         + (f": {detail}" if detail else ""))


class NonlinearInDecisions(LoweringError):
    pass


class NonlinearInParameters(LoweringError):
    pass


class NonAffine(LoweringError):
    pass


class MissingParameterValue(Exception):
    def __init__(self, entry):
        self.entry = entry
        super().__init__(f"no value for uncertain parameter {entry!r}")


# --- monomial space ------------------------------------------------------------

@dataclass(frozen=True)
class Space:
    np_: int
    nx: int

    @property
    def K(self) -> int:
        return 1 + self.np_ + self.nx + self.np_ * self.nx

    @property
    def p0(self) -> int:
        return 1

    @property
    def x0(self) -> int:
        return 1 + self.np_

    @property
    def b0(self) -> int:
        return 1 + self.np_ + self.nx

    def block_of(self, cols: np.ndarray) -> np.ndarray:
        """0 const, 1 parameter, 2 decision, 3 bilinear."""
        return np.searchsorted([self.p0, self.x0, self.b0], cols, side="right")

    def monomials(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        p = np.asarray(p, dtype=float).ravel()
        return np.concatenate([[1.0], p, x, np.outer(p, x).ravel()])


def _diag(v) -> sp.csr_matrix:
    return sp.diags(np.asarray(v, dtype=float), format="csr")


class BiAffine:
    """A tensor of bi-affine forms (immutable by convention)."""

    __slots__ = ("shape", "M", "space")

    def __init__(self, shape, M, space: Space):
        self.shape = tuple(shape)
        M = sp.csr_matrix(M)
        M.eliminate_zeros()
        self.M = M
        self.space = space

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    @classmethod
    def constant(cls, value, space: Space) -> "BiAffine":
        v = np.asarray(value, dtype=float)
        flat = v.ravel()
        M = sp.csr_matrix((flat, (np.arange(flat.size), np.zeros(flat.size, dtype=int))),
                          shape=(flat.size, space.K))
        return cls(v.shape, M, space)

    @classmethod
    def unit(cls, shape, offset: int, space: Space, block: str) -> "BiAffine":
        n = int(np.prod(shape, dtype=int))
        start = (space.p0 if block == "p" else space.x0) + offset
        M = sp.csr_matrix((np.ones(n), (np.arange(n), start + np.arange(n))),
                          shape=(n, space.K))
        return cls(shape, M, space)

    # structure queries
    def _row_flags(self):
        M = self.M
        rows = np.repeat(np.arange(M.shape[0]), np.diff(M.indptr))
        blk = self.space.block_of(M.indices)
        flags = []
        for b in (1, 2, 3):
            flags.append(np.bincount(rows[blk == b], minlength=M.shape[0]) > 0)
        return flags

    @property
    def is_constant(self) -> bool:
        return not np.any(self.M.indices != 0)

    def const_values(self) -> np.ndarray:
        return self.M[:, 0].toarray().ravel().reshape(self.shape)

    # reshaping
    def reshape(self, shape) -> "BiAffine":
        if int(np.prod(shape, dtype=int)) != self.size:
            raise expr.BroadcastError(self.shape, shape)
        return BiAffine(shape, self.M, self.space)

    def take(self, idx: np.ndarray, shape) -> "BiAffine":
        return BiAffine(shape, self.M[np.asarray(idx, dtype=int)], self.space)

    def broadcast_to(self, shape) -> "BiAffine":
        shape = tuple(shape)
        if shape == self.shape:
            return self
        idx = np.broadcast_to(np.arange(self.size).reshape(self.shape), shape).ravel()
        return self.take(idx, shape)

    # arithmetic
    def _pair(self, other):
        shape = expr.broadcast_shape(self.shape, other.shape)
        return self.broadcast_to(shape), other.broadcast_to(shape), shape

    def __add__(self, other):
        a, b, shape = self._pair(other)
        return BiAffine(shape, a.M + b.M, self.space)

    def __neg__(self):
        return BiAffine(self.shape, -self.M, self.space)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        a, b, shape = self._pair(other)
        sp_ = self.space
        if a.is_constant:
            return BiAffine(shape, _diag(a.M[:, 0].toarray().ravel()) @ b.M, sp_)
        if b.is_constant:
            return BiAffine(shape, _diag(b.M[:, 0].toarray().ravel()) @ a.M, sp_)
        Pa, Xa, Ba = a._row_flags()
        Pb, Xb, Bb = b._row_flags()
        if np.any(Xa & Xb) or np.any(Ba & (Xb | Bb)) or np.any(Bb & Xa):
            raise NonlinearInDecisions(detail="product of decision-dependent terms")
        if np.any(Pa & Pb) or np.any(Ba & Pb) or np.any(Bb & Pa):
            raise NonlinearInParameters(detail="product of parameter-dependent terms")
        ca = a.M[:, 0].toarray().ravel()
        cb = b.M[:, 0].toarray().ravel()
        m = a.M.shape[0]
        e0 = sp.csr_matrix((ca * cb, (np.arange(m), np.zeros(m, dtype=int))), shape=(m, sp_.K))
        out = _diag(ca) @ b.M + _diag(cb) @ a.M - e0
        out = out + _rowkron(a.M[:, sp_.p0:sp_.x0], b.M[:, sp_.x0:sp_.b0], sp_)
        out = out + _rowkron(b.M[:, sp_.p0:sp_.x0], a.M[:, sp_.x0:sp_.b0], sp_)
        return BiAffine(shape, out, sp_)

    def __truediv__(self, other):
        a, b, shape = self._pair(other)
        if not b.is_constant:
            raise NonAffine(detail="division by a symbol-dependent expression")
        d = b.M[:, 0].toarray().ravel()
        if np.any(d == 0):
            raise expr.DivisionByZero("division by zero")
        return BiAffine(shape, _diag(1.0 / d) @ a.M, self.space)

    def sum(self, axis: int | None = None) -> "BiAffine":
        if axis is None:
            return BiAffine((), sp.csr_matrix(self.M.sum(axis=0)), self.space)
        axis = expr.normalize_axis(axis, len(self.shape))
        out_shape = self.shape[:axis] + self.shape[axis + 1:]
        n_out = int(np.prod(out_shape, dtype=int))
        out_idx = np.expand_dims(np.arange(n_out).reshape(out_shape), axis)
        target = np.broadcast_to(out_idx, self.shape).ravel()
        S = sp.csr_matrix((np.ones(self.size), (target, np.arange(self.size))),
                          shape=(n_out, self.size))
        return BiAffine(out_shape, S @ self.M, self.space)

    def matmul(self, other: "BiAffine") -> "BiAffine":
        out_shape = expr.matmul_shape(self.shape, other.shape)
        a = self.reshape((1,) + self.shape + (1,) if len(self.shape) == 1 else self.shape + (1,))
        j = other.shape[0]
        k = other.shape[1] if len(other.shape) == 2 else 1
        b = other.reshape((1, j, k))
        return (a * b).sum(axis=1).reshape(out_shape)


def _rowkron(L: sp.csr_matrix, R: sp.csr_matrix, space: Space) -> sp.csr_matrix:
    """Row-wise Kronecker product of parameter and decision coefficient rows."""
    m = L.shape[0]
    L = L.tocsr()
    R = R.tocsr()
    if L.nnz == 0 or R.nnz == 0:
        return sp.csr_matrix((m, space.K))
    r1 = np.repeat(np.arange(m), np.diff(L.indptr))
    reps = np.diff(R.indptr)[r1]
    e1 = np.repeat(np.arange(L.nnz), reps)
    starts = np.cumsum(reps) - reps
    within = np.arange(e1.size) - np.repeat(starts, reps)
    e2 = R.indptr[r1[e1]] + within
    rows = r1[e1]
    cols = space.b0 + L.indices[e1] * space.nx + R.indices[e2]
    vals = L.data[e1] * R.data[e2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, space.K))


# --- model ----------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    symbol: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    def entry_names(self) -> list[str]:
        if not self.shape:
            return [self.symbol]
        return [f"{self.symbol}[{','.join(map(str, ix))}]" for ix in np.ndindex(*self.shape)]


@dataclass
class LinearModel:
    """Bi-affine model: ``sense`` objective, rows ``body <= 0`` or ``body == 0``.

    Rows whose body is a single decision entry with a constant coefficient
    are kept for reporting but flagged ``hoisted``; their content lives in
    ``lb``/``ub`` and they never become LP rows.
    """
    sense: str
    space: Space
    objective: sp.csr_matrix          # 1 x K
    rows: sp.csr_matrix               # R x K
    relation: np.ndarray              # "le" | "eq"
    origin: np.ndarray                # index into truth constraints
    hoisted: np.ndarray               # bool
    decisions: list[Block]
    params: list[Block]
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    nominal: np.ndarray               # per uncertain entry
    param_shapes: dict = field(default_factory=dict)

    @property
    def nx(self) -> int:
        return self.space.nx

    @property
    def np_(self) -> int:
        return self.space.np_

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(~self.hoisted)

    def decision_names(self) -> list[str]:
        return [n for b in self.decisions for n in b.entry_names()]

    def param_names(self) -> list[str]:
        return [n for b in self.params for n in b.entry_names()]

    def is_uncertain(self, r: int) -> bool:
        row = self.rows[r]
        return bool(np.any((row.indices >= self.space.p0) & (row.indices < self.space.x0))
                    or np.any(row.indices >= self.space.b0))

    def row_parts(self, row: sp.csr_matrix):
        """Split a 1xK row into (d0, dx, cp, Cpx).

        ``body(x, p) = d0 + dx.x + (cp + Cpx x).p``; ``cp`` has length np_
        and ``Cpx`` is (np_, nx).
        """
        s = self.space
        dense_head = row[:, :s.b0].toarray().ravel()
        d0 = dense_head[0]
        cp = dense_head[s.p0:s.x0]
        dx = dense_head[s.x0:s.b0]
        tail = row[:, s.b0:].tocoo()
        Cpx = sp.csr_matrix((tail.data, (tail.col // s.nx, tail.col % s.nx)),
                            shape=(s.np_, s.nx))
        return d0, dx, cp, Cpx

    def evaluate(self, x, p):
        """Objective value and all row bodies at (x, p)."""
        z = self.space.monomials(x, p)
        return float((self.objective @ z)[0]), self.rows @ z

    def param_vector(self, values) -> np.ndarray:
        """Flatten a ``{symbol: array}`` assignment to the uncertain-entry vector."""
        if isinstance(values, np.ndarray):
            v = np.asarray(values, dtype=float).ravel()
            if v.size != self.np_:
                raise MissingParameterValue(f"vector of length {self.np_}")
            return v
        out = np.empty(self.np_)
        for b in self.params:
            if b.symbol not in values:
                raise MissingParameterValue(b.symbol)
            arr = np.asarray(values[b.symbol], dtype=float)
            if arr.shape != b.shape:
                raise MissingParameterValue(f"{b.symbol} with shape {list(b.shape)}")
            out[b.offset:b.offset + b.size] = arr.ravel()
        return out

    def substitution(self, p: np.ndarray) -> sp.csr_matrix:
        """Matrix T with ``rows @ T`` = ``[constant | decision coefficients]`` at p."""
        s = self.space
        nx, np_ = s.nx, s.np_
        rows = [0]
        cols = [0]
        vals = [1.0]
        rows += list(range(s.p0, s.x0))
        cols += [0] * np_
        vals += list(p)
        rows += list(range(s.x0, s.b0))
        cols += list(range(1, nx + 1))
        vals += [1.0] * nx
        if np_ and nx:
            kk, jj = np.divmod(np.arange(np_ * nx), nx)
            rows += list(s.b0 + np.arange(np_ * nx))
            cols += list(1 + jj)
            vals += list(p[kk])
        return sp.csr_matrix((vals, (rows, cols)), shape=(s.K, 1 + nx))

    def report(self) -> str:
        """Human-readable dump of rows and coefficients."""
        dn = self.decision_names()
        pn = self.param_names()
        s = self.space

        def fmt(row):
            terms = []
            row = row.tocoo()
            for c, v in sorted(zip(row.col, row.data)):
                if c == 0:
                    terms.append(f"{v:+.6g}")
                elif c < s.x0:
                    terms.append(f"{v:+.6g}*{pn[c - s.p0]}")
                elif c < s.b0:
                    terms.append(f"{v:+.6g}*{dn[c - s.x0]}")
                else:
                    k, j = divmod(c - s.b0, s.nx)
                    terms.append(f"{v:+.6g}*{pn[k]}*{dn[j]}")
            return " ".join(terms) or "0"

        lines = [f"sense: {self.sense}", f"decisions: {s.nx}  uncertain entries: {s.np_}",
                 f"objective: {fmt(self.objective)}"]
        for r in range(self.rows.shape[0]):
            rel = "<= 0" if self.relation[r] == "le" else "== 0"
            tag = " (bound)" if self.hoisted[r] else ""
            lines.append(f"row {r} [c{self.origin[r]}]{tag}: {fmt(self.rows[r])} {rel}")
        lines.append("bounds: " + ", ".join(
            f"{n} in [{lo:g}, {hi:g}]{' int' if it else ''}"
            for n, lo, hi, it in zip(dn, self.lb, self.ub, self.integer)))
        return "\n".join(lines)


# --- lowering ---------------------------------------------------------------------

class _Lowerer:
    def __init__(self, decisions, parameters):
        self.dblocks = []
        off = 0
        for d in decisions:
            self.dblocks.append(Block(d.symbol, tuple(d.shape), off))
            off += self.dblocks[-1].size
        nx = off
        self.pblocks = []
        self.det = {}
        nominal = []
        off = 0
        for p in parameters:
            if p.is_random:
                self.pblocks.append(Block(p.symbol, tuple(p.shape), off))
                off += self.pblocks[-1].size
                nominal.append(np.asarray(p.value, dtype=float).ravel())
            else:
                self.det[p.symbol] = np.asarray(p.value, dtype=float)
        self.space = Space(off, nx)
        self.nominal = np.concatenate(nominal) if nominal else np.zeros(0)
        self.decisions = {b.symbol: b for b in self.dblocks}
        self.params = {b.symbol: b for b in self.pblocks}
        self.param_shapes = {p.symbol: tuple(p.shape) for p in parameters}

    def lower(self, node) -> BiAffine:
        s = self.space
        if isinstance(node, expr.Num):
            return BiAffine.constant(node.value, s)
        if isinstance(node, expr.Ident):
            name = node.name
            if name in self.decisions:
                b = self.decisions[name]
                return BiAffine.unit(b.shape, b.offset, s, "x")
            if name in self.params:
                b = self.params[name]
                return BiAffine.unit(b.shape, b.offset, s, "p")
            if name in self.det:
                return BiAffine.constant(self.det[name], s)
            raise expr.UnboundSymbol(name)
        if isinstance(node, expr.Neg):
            return -self.lower(node.expr)
        if isinstance(node, expr.ListLit):
            parts = [self.lower(e) for e in node.elements]
            shapes = {q.shape for q in parts}
            if len(shapes) != 1:
                raise expr.BroadcastError(*shapes)
            return BiAffine((len(parts),) + parts[0].shape, sp.vstack([q.M for q in parts]), s)
        if isinstance(node, expr.BinOp):
            a = self.lower(node.lhs)
            b = self.lower(node.rhs)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                return a / b
            return a.matmul(b)
        if isinstance(node, expr.Call):
            args = [self.lower(a) for a in node.args]
            if node.fn == "asarray":
                return args[0]
            if node.fn == "sum":
                return args[0].sum(node.axis)
            if node.fn in ("abs", "maximum", "minimum"):
                if not all(a.is_constant for a in args):
                    raise NonAffine(detail=f"np.{node.fn} of a symbol-dependent expression")
                vals = [a.const_values() for a in args]
                f = {"abs": np.abs, "maximum": np.maximum, "minimum": np.minimum}[node.fn]
                return BiAffine.constant(f(*vals), s)
            raise NonAffine(detail=f"{node.fn} used as a value")
        raise NonAffine(detail=f"cannot lower {type(node).__name__}")

    def decision_target(self, node) -> Block:
        while isinstance(node, expr.Call) and node.fn == "asarray":
            node = node.args[0]
        if isinstance(node, expr.Ident) and node.name in self.decisions:
            return self.decisions[node.name]
        raise NonAffine(detail="type predicates apply to a decision symbol")


def lower_to_model(truth: TruthSpec, bundle) -> LinearModel:
    """Lower truth expressions into a :class:`LinearModel`.

    ``bundle`` needs ``decisions`` and ``parameters`` (as a ProblemBundle or
    an author view has); deterministic parameters are folded to constants.
    """
    lw = _Lowerer(bundle.decisions, bundle.parameters)
    s = lw.space
    lb = np.full(s.nx, -np.inf)
    ub = np.full(s.nx, np.inf)
    integer = np.zeros(s.nx, dtype=bool)

    def located(origin, fn, *args):
        try:
            return fn(*args)
        except LoweringError as e:
            raise type(e)(origin, e.detail) from None

    blocks, relations, origins = [], [], []
    for i, text in enumerate(truth.constraints):
        origin = f"constraints[{i}]"
        node = expr.parse_expr(text)
        if isinstance(node, expr.Call) and node.fn in expr.PREDICATES:
            b = located(origin, lw.decision_target, node.args[0])
            sl = slice(b.offset, b.offset + b.size)
            integer[sl] = True
            if node.fn == "is_binary":
                lb[sl] = np.maximum(lb[sl], 0.0)
                ub[sl] = np.minimum(ub[sl], 1.0)
            continue
        if not isinstance(node, expr.Compare):
            raise expr.NotAConstraint(f"{origin}: {text}")
        lhs = located(origin, lw.lower, node.lhs)
        rhs = located(origin, lw.lower, node.rhs)
        body = located(origin, lambda: rhs - lhs if node.op == ">=" else lhs - rhs)
        blocks.append(body.M)
        relations += ["eq" if node.op == "==" else "le"] * body.size
        origins += [i] * body.size

    obj_node = expr.parse_objective(truth.objective)
    obj = located("objective", lw.lower, obj_node)
    if obj.size != 1:
        raise NonAffine("objective", f"objective has shape {list(obj.shape)}, expected a scalar")

    rows = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, s.K))
    rows.eliminate_zeros()
    relation = np.array(relations, dtype=object)
    origin = np.array(origins, dtype=int)
    hoisted = np.zeros(rows.shape[0], dtype=bool)
    for r in range(rows.shape[0]):
        row = rows[r]
        nz = row.indices[row.indices != 0]
        if nz.size != 1 or not (s.x0 <= nz[0] < s.b0):
            continue
        j = nz[0] - s.x0
        a = row[0, nz[0]]
        c = row[0, 0]
        bound = -c / a
        if relation[r] == "eq":
            lb[j] = max(lb[j], bound)
            ub[j] = min(ub[j], bound)
        elif a > 0:
            ub[j] = min(ub[j], bound)
        else:
            lb[j] = max(lb[j], bound)
        hoisted[r] = True

    for d, b in zip(bundle.decisions, lw.dblocks):
        sl = slice(b.offset, b.offset + b.size)
        if d.is_non_negative:
            lb[sl] = np.maximum(lb[sl], 0.0)
        if d.type in ("Integer", "Binary"):
            integer[sl] = True
        if d.type == "Binary":
            lb[sl] = np.maximum(lb[sl], 0.0)
            ub[sl] = np.minimum(ub[sl], 1.0)

    return LinearModel(
        sense=truth.problem_type, space=s, objective=sp.csr_matrix(obj.M), rows=rows,
        relation=relation, origin=origin, hoisted=hoisted, decisions=lw.dblocks,
        params=lw.pblocks, lb=lb, ub=ub, integer=integer, nominal=lw.nominal,
        param_shapes=lw.param_shapes)


def substitute_params(model, values) -> ConcreteLP:
    """Fold a joint parameter assignment into a decisions-only LP."""
    if isinstance(model, ConcreteLP):
        return model
    p = model.param_vector(values)
    T = model.substitution(p)
    obj = (model.objective @ T).toarray().ravel()
    act = model.active
    body = (model.rows[act] @ T).toarray() if act.size else np.zeros((0, 1 + model.nx))
    rel = model.relation[act]
    le = rel == "le"
    eq = ~le
    return ConcreteLP(
        sense=model.sense, c=obj[1:], c0=obj[0],
        A_ub=body[le, 1:], b_ub=-body[le, 0], A_eq=body[eq, 1:], b_eq=-body[eq, 0],
        lb=model.lb.copy(), ub=model.ub.copy(), integer=model.integer.copy(),
        names=model.decision_names(), n_decisions=model.nx,
        ub_labels=[f"c{o}" for o in model.origin[act][le]],
        eq_labels=[f"c{o}" for o in model.origin[act][eq]])
