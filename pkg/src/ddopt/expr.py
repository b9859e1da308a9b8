"""Parser and evaluator for truth expressions.

Truth files state constraints and objectives as small numpy-flavoured
expressions, e.g.::

    np.sum(np.asarray(x), axis=1) <= np.asarray(inventory)

Only a closed grammar is accepted; anything outside it is rejected rather
than guessed. Values are float64 numpy arrays (scalars have shape ``()``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

DEFAULT_TOL = 1e-6

FUNCTIONS = {
    "np.asarray": "asarray",
    "np.sum": "sum",
    "np.abs": "abs",
    "np.maximum": "maximum",
    "np.minimum": "minimum",
    "is_integer": "is_integer",
    "is_binary": "is_binary",
}
SURFACE = {v: k for k, v in FUNCTIONS.items()}
ARITY = {"asarray": 1, "sum": 1, "abs": 1, "maximum": 2, "minimum": 2,
         "is_integer": 1, "is_binary": 1}
PREDICATES = ("is_integer", "is_binary")
COMPARE_OPS = ("<=", ">=", "==")


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, position: int, expected: str, text: str = ""):
        self.position = position
        self.expected = expected
        super().__init__(f"syntax error at {position}: expected {expected}"
                         + (f" in {text!r}" if text else ""))


class UnknownFunction(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown function {name!r}")


class UnboundSymbol(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"no binding for {name!r}")


class BroadcastError(ExprError):
    def __init__(self, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"shapes {self.shapes} do not broadcast")


class AxisOutOfRange(ExprError):
    pass


class DivisionByZero(ExprError):
    pass


class NotAConstraint(ExprError):
    pass


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    axis: int | None = None


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Compare:
    op: str
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Neg:
    expr: "Node"


@dataclass(frozen=True)
class ListLit:
    elements: tuple


Node = Union[Num, Ident, Call, BinOp, Compare, Neg, ListLit]


# --- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*(?:\.[A-Za-z_][A-Za-z_0-9]*)*)
  | (?P<op><=|>=|==|[-+*/@(),=\[\]])
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(pos, "a token", text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def accept(self, value: str) -> bool:
        if self.tok[0] == "op" and self.tok[1] == value:
            self.i += 1
            return True
        return False

    def expect(self, value: str):
        if not self.accept(value):
            raise ExprSyntaxError(self.tok[2], repr(value), self.text)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok[0] != "end":
            raise ExprSyntaxError(self.tok[2], "end of expression", self.text)
        return node

    def expr(self) -> Node:
        lhs = self.add()
        if self.tok[0] == "op" and self.tok[1] in COMPARE_OPS:
            op = self.tok[1]
            self.i += 1
            return Compare(op, lhs, self.add())
        return lhs

    def add(self) -> Node:
        node = self.mul()
        while self.tok[0] == "op" and self.tok[1] in ("+", "-"):
            op = self.tok[1]
            self.i += 1
            node = BinOp(op, node, self.mul())
        return node

    def mul(self) -> Node:
        node = self.unary()
        while self.tok[0] == "op" and self.tok[1] in ("*", "/", "@"):
            op = self.tok[1]
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.accept("-"):
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Node:
        kind, value, pos = self.tok
        if kind == "num":
            self.i += 1
            return Num(float(value))
        if kind == "name":
            self.i += 1
            if self.tok[0] == "op" and self.tok[1] == "(":
                return self.call(value, pos)
            if "." in value:
                raise ExprSyntaxError(pos, "an identifier", self.text)
            return Ident(value)
        if self.accept("("):
            node = self.nested()
            self.expect(")")
            return node
        if self.accept("["):
            elements = [self.nested()]
            while self.accept(","):
                elements.append(self.nested())
            self.expect("]")
            return ListLit(tuple(elements))
        raise ExprSyntaxError(pos, "a number, name, '(' or '['", self.text)

    def nested(self) -> Node:
        pos = self.tok[2]
        node = self.expr()
        if isinstance(node, Compare):
            raise ExprSyntaxError(pos, "comparison only at top level", self.text)
        return node

    def call(self, name: str, pos: int) -> Node:
        if name not in FUNCTIONS:
            raise UnknownFunction(name)
        fn = FUNCTIONS[name]
        self.expect("(")
        args = [self.nested()]
        axis = None
        while self.accept(","):
            if self.tok[0] == "name" and self.tok[1] == "axis":
                self.i += 1
                self.expect("=")
                sign = -1 if self.accept("-") else 1
                kind, value, apos = self.tok
                if kind != "num" or not value.isdigit():
                    raise ExprSyntaxError(apos, "an integer axis", self.text)
                self.i += 1
                axis = sign * int(value)
                break
            args.append(self.nested())
        self.expect(")")
        if len(args) != ARITY[fn]:
            raise ExprSyntaxError(pos, f"{ARITY[fn]} argument(s) to {name}",
                                  self.text)
        if axis is not None and fn != "sum":
            raise ExprSyntaxError(pos, f"no axis argument for {name}", self.text)
        return Call(fn, tuple(args), axis)


def parse_expr(text: str) -> Node:
    """Parse one truth expression into an AST."""
    if not text or not text.strip():
        raise ExprSyntaxError(0, "a non-empty expression", text)
    node = _Parser(text).parse()
    inner = node.args if isinstance(node, Call) and node.fn in PREDICATES else [node]
    for sub in inner:
        if _has_predicate(sub):
            raise ExprSyntaxError(0, "is_integer/is_binary only at top level", text)
    return node


def _has_predicate(node: Node) -> bool:
    if isinstance(node, Call):
        return node.fn in PREDICATES or any(_has_predicate(a) for a in node.args)
    if isinstance(node, (BinOp, Compare)):
        return _has_predicate(node.lhs) or _has_predicate(node.rhs)
    if isinstance(node, Neg):
        return _has_predicate(node.expr)
    if isinstance(node, ListLit):
        return any(_has_predicate(e) for e in node.elements)
    return False


def parse_objective(text: str) -> Node:
    node = parse_expr(text)
    if isinstance(node, Compare) or (isinstance(node, Call)
                                     and node.fn in PREDICATES):
        raise ExprSyntaxError(0, "an objective without comparison", text)
    return node


def to_text(node: Node) -> str:
    """Render an AST back to surface syntax (fully parenthesized)."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Ident):
        return node.name
    if isinstance(node, Neg):
        return f"-{to_text(node.expr)}"
    if isinstance(node, BinOp):
        return f"({to_text(node.lhs)} {node.op} {to_text(node.rhs)})"
    if isinstance(node, Compare):
        return f"{to_text(node.lhs)} {node.op} {to_text(node.rhs)}"
    if isinstance(node, ListLit):
        return "[" + ", ".join(to_text(e) for e in node.elements) + "]"
    if isinstance(node, Call):
        parts = [to_text(a) for a in node.args]
        if node.axis is not None:
            parts.append(f"axis={node.axis}")
        return f"{SURFACE[node.fn]}({', '.join(parts)})"
    raise TypeError(f"not an expression node: {node!r}")


def free_symbols(node: Node) -> set[str]:
    if isinstance(node, Ident):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return free_symbols(node.expr)
    if isinstance(node, (BinOp, Compare)):
        return free_symbols(node.lhs) | free_symbols(node.rhs)
    if isinstance(node, Call):
        return set().union(*(free_symbols(a) for a in node.args))
    if isinstance(node, ListLit):
        return set().union(*(free_symbols(e) for e in node.elements))
    raise TypeError(node)


# --- shape helpers (shared with the bi-affine interpreter) -----------------

def broadcast_shape(*shapes) -> tuple[int, ...]:
    ndim = max((len(s) for s in shapes), default=0)
    out = []
    for k in range(1, ndim + 1):
        size = 1
        for s in shapes:
            if k > len(s):
                continue
            d = s[-k]
            if d == 1:
                continue
            if size != 1 and d != size:
                raise BroadcastError(*shapes)
            size = d
        out.append(size)
    return tuple(reversed(out))


def normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for {ndim}-d value")
    return axis % ndim


def matmul_shape(a: tuple, b: tuple) -> tuple:
    if not (1 <= len(a) <= 2 and 1 <= len(b) <= 2):
        raise BroadcastError(a, b)
    inner_a = a[-1]
    inner_b = b[0]
    if inner_a != inner_b:
        raise BroadcastError(a, b)
    return tuple(a[:-1]) + tuple(b[1:])


# --- numeric evaluation -----------------------------------------------------

Env = Mapping[str, np.ndarray]


def eval_expr(node: Node, env: Env) -> np.ndarray:
    """Evaluate an expression (not a comparison) to a float64 array."""
    if isinstance(node, Num):
        return np.asarray(node.value, dtype=float)
    if isinstance(node, Ident):
        try:
            return np.asarray(env[node.name], dtype=float)
        except KeyError:
            raise UnboundSymbol(node.name) from None
    if isinstance(node, Neg):
        return -eval_expr(node.expr, env)
    if isinstance(node, ListLit):
        parts = [eval_expr(e, env) for e in node.elements]
        shapes = {p.shape for p in parts}
        if len(shapes) != 1:
            raise BroadcastError(*shapes)
        return np.stack(parts).astype(float)
    if isinstance(node, BinOp):
        a = eval_expr(node.lhs, env)
        b = eval_expr(node.rhs, env)
        if node.op == "@":
            matmul_shape(a.shape, b.shape)
            return np.asarray(a @ b, dtype=float)
        broadcast_shape(a.shape, b.shape)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if np.any(b == 0):
            raise DivisionByZero(to_text(node))
        return a / b
    if isinstance(node, Call):
        args = [eval_expr(a, env) for a in node.args]
        fn = node.fn
        if fn == "asarray":
            return args[0]
        if fn == "sum":
            if node.axis is None:
                return np.asarray(args[0].sum(), dtype=float)
            return args[0].sum(axis=normalize_axis(node.axis, args[0].ndim))
        if fn == "abs":
            return np.abs(args[0])
        if fn in ("maximum", "minimum"):
            broadcast_shape(args[0].shape, args[1].shape)
            f = np.maximum if fn == "maximum" else np.minimum
            return f(args[0], args[1])
        raise NotAConstraint(f"{fn} is a predicate, not a value")
    if isinstance(node, Compare):
        raise NotAConstraint("comparison used as a value")
    raise TypeError(node)


@dataclass(frozen=True)
class CheckResult:
    satisfied: bool
    worst_violation: float


def constraint_violation(node: Node, env: Env) -> np.ndarray:
    """Elementwise non-negative violation of a constraint expression."""
    if isinstance(node, Compare):
        lhs = eval_expr(node.lhs, env)
        rhs = eval_expr(node.rhs, env)
        broadcast_shape(lhs.shape, rhs.shape)
        if node.op == "<=":
            return np.maximum(lhs - rhs, 0.0)
        if node.op == ">=":
            return np.maximum(rhs - lhs, 0.0)
        return np.abs(lhs - rhs)
    if isinstance(node, Call) and node.fn in PREDICATES:
        v = eval_expr(node.args[0], env)
        if node.fn == "is_integer":
            return np.abs(v - np.rint(v))
        return np.minimum(np.abs(v), np.abs(v - 1.0))
    raise NotAConstraint(to_text(node))


def check_constraint(node: Node, env: Env, tol_abs: float = DEFAULT_TOL) -> CheckResult:
    viol = constraint_violation(node, env)
    worst = float(viol.max()) if viol.size else 0.0
    return CheckResult(worst <= tol_abs, worst)
