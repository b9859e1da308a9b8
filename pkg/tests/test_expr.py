import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddopt import expr
from ddopt.expr import (BinOp, Call, Compare, Ident, ListLit, Neg, Num, parse_expr, to_text)


def test_parse_supply_constraint():
    node = parse_expr("np.sum(np.asarray(x), axis=1) <= np.asarray(inventory)")
    assert node == Compare("<=", Call("sum", (Call("asarray", (Ident("x"),), None),), 1),
                           Call("asarray", (Ident("inventory"),), None))


def test_parse_atom():
    assert parse_expr("x") == Ident("x")


def test_unknown_function():
    with pytest.raises(expr.UnknownFunction) as e:
        parse_expr("np.prod(x)")
    assert e.value.name == "np.prod"


@pytest.mark.parametrize("text", ["", "x +", "(x", "np.sum(x, axis=y)", "a <= b <= c",
                                  "np.asarray(x <= 1)", "np.abs(x, axis=0)", "x.y",
                                  "np.maximum(x)", "is_binary(x) + 1"])
def test_syntax_errors(text):
    with pytest.raises(expr.ExprError):
        parse_expr(text)


def test_objective_rejects_comparison():
    with pytest.raises(expr.ExprSyntaxError):
        expr.parse_objective("x <= 1")


def test_sum_axis1_of_zeros():
    v = expr.eval_expr(parse_expr("np.sum(np.asarray(x), axis=1)"), {"x": np.zeros((5, 7))})
    assert v.tolist() == [0.0] * 5


def test_cost_times_ones(transport):
    env = {"cost": transport.training.param("cost").value, "x": np.ones((5, 7))}
    v = expr.eval_expr(parse_expr(transport.truth.objective), env)
    # exact rational sum of the published nominal matrix is 823/5
    assert float(v) == pytest.approx(164.6, abs=1e-9)


def test_asarray_identity():
    d = np.array([32.2, 32.4, 21.8, 20.6, 36.8, 42.0, 24.6])
    assert np.array_equal(expr.eval_expr(parse_expr("np.asarray(demand)"), {"demand": d}), d)


def test_check_nonnegativity_at_zero():
    r = expr.check_constraint(parse_expr("np.asarray(x) >= 0"), {"x": np.zeros((5, 7))})
    assert r.satisfied and r.worst_violation == 0.0


def test_check_demand_at_zero():
    d = np.array([32.2, 32.4, 21.8, 20.6, 36.8, 42.0, 24.6])
    r = expr.check_constraint(parse_expr("np.sum(np.asarray(x), axis=0) >= np.asarray(demand)"),
                              {"x": np.zeros((5, 7)), "demand": d})
    assert not r.satisfied and r.worst_violation == 42.0


def test_is_binary():
    r = expr.check_constraint(parse_expr("is_binary(y)"), {"y": np.array([0, 1, 0.5])})
    assert not r.satisfied
    assert expr.check_constraint(parse_expr("is_integer(y)"), {"y": np.array([0, 3.0])}).satisfied


def test_errors_on_eval():
    with pytest.raises(expr.DivisionByZero):
        expr.eval_expr(parse_expr("x / y"), {"x": np.ones(2), "y": np.array([1.0, 0.0])})
    with pytest.raises(expr.BroadcastError):
        expr.eval_expr(parse_expr("x + y"), {"x": np.ones(2), "y": np.ones(3)})
    with pytest.raises(expr.AxisOutOfRange):
        expr.eval_expr(parse_expr("np.sum(x, axis=2)"), {"x": np.ones((2, 2))})
    with pytest.raises(expr.UnboundSymbol):
        expr.eval_expr(parse_expr("q"), {})


def test_matmul_and_list():
    env = {"A": np.arange(6.0).reshape(2, 3), "x": np.ones(3)}
    assert expr.eval_expr(parse_expr("A @ x"), env).tolist() == [3.0, 12.0]
    assert expr.eval_expr(parse_expr("[1, 2] * 2"), {}).tolist() == [2.0, 4.0]
    assert expr.eval_expr(parse_expr("np.sum(A, axis=-1)"), env).tolist() == [3.0, 12.0]


def test_truth_fixture_expressions_parse(transport):
    for c in transport.truth.constraints:
        assert isinstance(parse_expr(c), Compare)
    expr.parse_objective(transport.truth.objective)


# --- properties ------------------------------------------------------------------------

names = st.sampled_from(["x", "y", "cost", "d"])
nums = st.floats(min_value=0, max_value=1e6, allow_nan=False).map(lambda v: Num(v))


def _values(depth):
    if depth == 0:
        return st.one_of(names.map(Ident), nums)
    sub = _values(depth - 1)
    return st.one_of(
        names.map(Ident), nums,
        st.builds(BinOp, st.sampled_from(["+", "-", "*", "/", "@"]), sub, sub),
        st.builds(Neg, sub),
        st.builds(lambda a: Call("asarray", (a,), None), sub),
        st.builds(lambda a, ax: Call("sum", (a,), ax), sub, st.one_of(st.none(), st.integers(-2, 2))),
        st.builds(lambda a, b: Call("maximum", (a, b), None), sub, sub),
        st.lists(sub, min_size=1, max_size=3).map(lambda xs: ListLit(tuple(xs))),
    )


constraints = st.one_of(_values(3), st.builds(Compare, st.sampled_from(["<=", ">=", "=="]),
                                              _values(3), _values(3)))


@settings(max_examples=300)
@given(constraints)
def test_print_parse_roundtrip(node):
    assert parse_expr(to_text(node)) == node


def _brute_broadcast(a, b):
    nd = max(len(a), len(b))
    a = (1,) * (nd - len(a)) + tuple(a)
    b = (1,) * (nd - len(b)) + tuple(b)
    out = []
    for p, q in zip(a, b):
        if p != q and 1 not in (p, q):
            return None
        out.append(max(p, q) if 1 in (p, q) else p)
    return tuple(out)


def test_broadcast_against_bruteforce():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        shapes = [tuple(rng.integers(1, 4, size=rng.integers(0, 4))) for _ in range(2)]
        want = _brute_broadcast(*shapes)
        if want is None:
            with pytest.raises(expr.BroadcastError):
                expr.broadcast_shape(*shapes)
        else:
            assert expr.broadcast_shape(*shapes) == want
            assert want == np.broadcast_shapes(*shapes)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(0, 5))
def test_tolerance_monotone(vals, t):
    node = parse_expr("x <= 1")
    env = {"x": np.array(vals)}
    if expr.check_constraint(node, env, 0).satisfied:
        assert expr.check_constraint(node, env, t).satisfied


def test_eval_deterministic():
    node = parse_expr("np.sum(np.asarray(c) * np.asarray(x)) / 3")
    env = {"c": np.random.default_rng(0).normal(size=(4, 4)), "x": np.full((4, 4), 0.1)}
    a, b = expr.eval_expr(node, env), expr.eval_expr(node, env)
    assert a.tobytes() == b.tobytes()
