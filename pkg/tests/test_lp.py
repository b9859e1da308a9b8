import numpy as np
import pytest

from ddopt.lp import ConcreteLP, Status, dual_gap, solve, solve_lp, solve_milp, to_mps

from oracles import binary_enumeration, vertex_enumeration


def test_simple_min():
    lp = ConcreteLP("min", [-1, -1], A_ub=[[1, 1]], b_ub=[1])
    sol = solve_lp(lp)
    assert sol.status == Status.OPTIMAL and sol.objective == pytest.approx(-1)
    assert dual_gap(lp, sol) == pytest.approx((0, 0), abs=1e-9)


def test_max_with_equality_and_free_var():
    lp = ConcreteLP("max", [1, 2, 0], A_ub=[[1, 1, 0]], b_ub=[4], A_eq=[[1, -1, 1]], b_eq=[0],
                    lb=[0, 0, -np.inf], ub=[np.inf, 3, np.inf])
    sol = solve_lp(lp)
    assert sol.ok and sol.objective == pytest.approx(7)
    assert lp.max_violation(sol.x) < 1e-9
    infeas, gap = dual_gap(lp, sol)
    assert infeas < 1e-9 and gap < 1e-9


def test_infeasible_and_unbounded():
    assert solve_lp(ConcreteLP("min", [1], lb=[0], ub=[-1])).status == Status.INFEASIBLE
    assert solve_lp(ConcreteLP("min", [1, 0], A_eq=[[1, 1]], b_eq=[-1])).status == Status.INFEASIBLE
    assert solve_lp(ConcreteLP("min", [-1], lb=[-np.inf])).status == Status.UNBOUNDED


def test_redundant_equalities():
    lp = ConcreteLP("min", [1, 1], A_eq=[[1, 1], [2, 2]], b_eq=[2, 4])
    sol = solve_lp(lp)
    assert sol.ok and sol.objective == pytest.approx(2)


def test_degenerate_cycling_example():
    # Beale's example cycles under textbook Dantzig pricing without anti-cycling
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    sol = solve_lp(ConcreteLP("min", c, A_ub=A, b_ub=[0, 0, 1]))
    assert sol.ok and sol.objective == pytest.approx(-0.05)


def test_milp_small():
    sol = solve_milp(ConcreteLP("max", [1], ub=[1.5], integer=[True]))
    assert sol.ok and sol.x[0] == 1


def test_milp_infeasible_and_node_limit():
    lp = ConcreteLP("min", [1], A_eq=[[2]], b_eq=[1], integer=[True])
    assert solve_milp(lp).status == Status.INFEASIBLE
    rng = np.random.default_rng(0)
    n = 12
    w = rng.integers(5, 30, n).astype(float)
    big = ConcreteLP("max", rng.integers(5, 30, n), A_ub=[w], b_ub=[w.sum() / 2], ub=np.ones(n),
                     integer=np.ones(n, bool))
    assert solve_milp(big, max_nodes=2).status in (Status.NODE_LIMIT, Status.OPTIMAL)


def _random_lp(rng):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 9))
    A = rng.integers(-5, 6, (m, n)).astype(float)
    x0 = rng.uniform(0, 3, n)
    b = A @ x0 + rng.uniform(0, 2, m)
    lb = np.zeros(n)
    ub = np.full(n, 4.0)
    k = int(rng.integers(0, 2))
    Aeq = rng.integers(-3, 4, (k, n)).astype(float)
    beq = Aeq @ x0
    c = rng.integers(-5, 6, n).astype(float)
    sense = "min" if rng.random() < 0.5 else "max"
    return ConcreteLP(sense, c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=beq, lb=lb, ub=ub)


def test_random_lps_against_vertices():
    rng = np.random.default_rng(123)
    for _ in range(60):
        lp = _random_lp(rng)
        ref = vertex_enumeration(lp.c, lp.A_ub, lp.b_ub, lp.A_eq, lp.b_eq, lp.lb, lp.ub, lp.sense)
        sol = solve_lp(lp)
        assert sol.ok and ref is not None
        assert sol.objective == pytest.approx(ref, abs=1e-7)


def test_random_knapsacks():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        c = rng.integers(1, 20, n).astype(float)
        A = rng.integers(0, 10, (2, n)).astype(float)
        b = A.sum(axis=1) / 2
        sol = solve(ConcreteLP("max", c, A_ub=A, b_ub=b, ub=np.ones(n), integer=np.ones(n, bool)))
        assert sol.objective == pytest.approx(binary_enumeration(c, A, b))


def test_mps_export():
    lp = ConcreteLP("max", [3, 2], c0=1.5, A_ub=[[1, 1]], b_ub=[4], A_eq=[[1, -1]], b_eq=[1e-5],
                    lb=[0, -np.inf], ub=[2, 5], integer=[False, True])
    text = to_mps(lp, "TOY")
    assert text.startswith("NAME          TOY\nROWS\n N  COST\n L  L0\n E  E0\n")
    assert "'INTORG'" in text and "'INTEND'" in text
    assert "1e-05" in text and " MI BND" in text and " UP BND       C0" in text
    assert text.rstrip().endswith("ENDATA")
