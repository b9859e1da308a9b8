import numpy as np
import pytest

from ddopt import expr
from ddopt.canonical import (MissingParameterValue, NonAffine, NonlinearInDecisions,
                             NonlinearInParameters, lower_to_model, substitute_params)
from ddopt.lp import solve

from helpers import make_bundle, param


def test_transport_shape(transport_model):
    m = transport_model
    assert m.nx == 35 and m.np_ == 7 + 35
    assert m.rows.shape[0] == 5 + 7 + 35
    assert m.hoisted.sum() == 35 and len(m.active) == 12
    assert list(m.origin[m.hoisted]) == [2] * 35
    assert np.all(m.lb == 0) and np.all(np.isinf(m.ub))
    d0, dx, cp, Cpx = m.row_parts(m.objective)
    assert Cpx.nnz == 35 and d0 == 0 and not dx.any() and not cp.any()


def test_demand_rows_are_negated(transport_model):
    m = transport_model
    x = np.zeros(35)
    p = np.concatenate([np.arange(1.0, 8.0), np.zeros(35)])
    _, bodies = m.evaluate(x, p)
    assert np.allclose(bodies[5:12], np.arange(1.0, 8.0))  # demand - sum(x)
    assert np.allclose(bodies[:5], -np.array([84, 35, 50, 40, 200]))


def test_quadratic_objective_rejected():
    b = make_bundle({"x": (2,)}, [], ["np.asarray(x) >= 0"], "np.sum(np.asarray(x) * np.asarray(x))")
    with pytest.raises(NonlinearInDecisions) as e:
        lower_to_model(b.truth, b)
    assert e.value.origin == "objective"


def test_parameter_product_rejected():
    b = make_bundle({"x": (2,)}, [param("p", sample=[[1, 2], [2, 3]])],
                    ["np.sum(p * p * x) <= 1"], "np.sum(x)")
    with pytest.raises(NonlinearInParameters) as e:
        lower_to_model(b.truth, b)
    assert e.value.origin == "constraints[0]"


def test_nonaffine_function_rejected():
    b = make_bundle({"x": (2,)}, [], ["np.abs(x) <= 1"], "np.sum(x)")
    with pytest.raises(NonAffine):
        lower_to_model(b.truth, b)


def test_division_and_constant_folding():
    b = make_bundle({"x": (2,)}, [param("k", [2.0, 4.0])],
                    ["x / k <= np.abs(-1)", "np.maximum(k, 3) @ x >= 1"], "np.sum(x) / 2", "max")
    m = lower_to_model(b.truth, b)
    x = np.array([0.5, 1.0])
    obj, bodies = m.evaluate(x, np.zeros(0))
    assert obj == pytest.approx(0.75)
    assert np.allclose(bodies, [0.25 - 1, 0.25 - 1, 1 - (3 * 0.5 + 4 * 1.0)])


def test_predicates_set_flags():
    b = make_bundle({"x": (3,), "y": (2,)}, [], ["is_binary(x)", "is_integer(y)", "np.sum(x) <= 2"],
                    "np.sum(x) + np.sum(y)")
    m = lower_to_model(b.truth, b)
    assert m.integer.tolist() == [True] * 5
    assert m.lb[:3].tolist() == [0, 0, 0] and m.ub[:3].tolist() == [1, 1, 1]
    assert m.rows.shape[0] == 1


def test_bounds_hoisted_both_sides():
    b = make_bundle({"x": (2,)}, [], ["np.asarray(x) <= 3", "2 * x >= 1", "x == [1, 2]"], "np.sum(x)")
    m = lower_to_model(b.truth, b)
    assert m.hoisted.all()
    assert m.lb.tolist() == [1, 2] and m.ub.tolist() == [1, 2]


def test_substitute_mean_is_lp(transport, transport_model):
    means = {p.symbol: p.sample.mean(axis=0) for p in transport.training.random_parameters}
    lp = substitute_params(transport_model, means)
    assert lp.n == 35 and lp.A_ub.shape == (12, 35)
    assert substitute_params(lp, means) is lp
    sol = solve(lp)
    assert sol.ok
    x = sol.x.reshape(5, 7)
    assert np.all(x.sum(axis=0) >= np.array([32.2, 32.4, 21.8, 20.6, 36.8, 42.0, 24.6]) - 1e-7)


def test_missing_parameter_value(transport_model):
    with pytest.raises(MissingParameterValue):
        substitute_params(transport_model, {"demand": np.ones(7)})


def test_no_parameters_substitution():
    b = make_bundle({"x": (2,)}, [param("k", [1.0, 1.0])], ["k @ x <= 1"], "np.sum(x)", "max")
    m = lower_to_model(b.truth, b)
    a = substitute_params(m, {})
    c = substitute_params(m, np.zeros(0))
    assert np.array_equal(a.A_ub, c.A_ub) and np.array_equal(a.b_ub, c.b_ub)


def _truth_values(bundle, x, penv):
    env = {**penv, "x": x}
    out = []
    for t in bundle.truth.constraints:
        node = expr.parse_expr(t)
        lhs, rhs = expr.eval_expr(node.lhs, env), expr.eval_expr(node.rhs, env)
        d = rhs - lhs if node.op == ">=" else lhs - rhs
        out.append(np.broadcast_to(d, np.broadcast_shapes(lhs.shape, rhs.shape)).ravel())
    return expr.eval_expr(expr.parse_objective(bundle.truth.objective), env), np.concatenate(out)


def test_evaluation_consistency_sample(transport, transport_model):
    rng = np.random.default_rng(3)
    m = transport_model
    for _ in range(50):
        x = rng.normal(size=(5, 7)) * 10
        env = {"inventory": transport.training.param("inventory").value,
               "demand": rng.normal(size=7) * 30, "cost": rng.normal(size=(5, 7)) * 5}
        obj, rows = _truth_values(transport, x, env)
        mobj, mrows = m.evaluate(x.ravel(), m.param_vector(env))
        assert abs(obj - mobj) <= 1e-9 * max(1, abs(obj))
        assert np.allclose(rows, mrows, rtol=0, atol=1e-9)


def test_normalization_soundness(transport, transport_model):
    rng = np.random.default_rng(11)
    m = transport_model
    for i in range(100):
        x = np.abs(rng.normal(size=(5, 7))) * 8 - (0.5 if i % 3 == 0 else 0)
        penv = transport.testing.scenario(i % 5)
        env = {**penv, "x": x}
        truth_ok = all(expr.check_constraint(expr.parse_expr(t), env).satisfied
                       for t in transport.truth.constraints)
        _, rows = m.evaluate(x.ravel(), m.param_vector(penv))
        model_ok = bool(np.all(rows <= 1e-6)) and bool(np.all(x.ravel() >= m.lb - 1e-6))
        assert truth_ok == model_ok


def test_report_mentions_rows(transport_model):
    text = transport_model.report()
    assert "row 0 [c0]" in text and "(bound)" in text
