"""Small synthetic bundles for tests."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ddopt.bundle import DecisionSpec, ParameterSpec, ProblemBundle, SampleSet, TruthSpec
from ddopt.canonical import Block, LinearModel, Space


def param(symbol, value=None, sample=None, nonneg=False, type_="Continuous"):
    if sample is not None:
        sample = np.asarray(sample, dtype=float)
        value = sample.mean(axis=0) if value is None else np.asarray(value, dtype=float)
        return ParameterSpec(symbol, symbol, True, value, value.shape, type_, nonneg, sample)
    value = np.asarray(value, dtype=float)
    return ParameterSpec(symbol, symbol, False, value, value.shape, type_, nonneg)


def make_bundle(decisions, params, constraints, objective, sense="min", testing=None,
                name="toy"):
    """``decisions``: {symbol: shape} or list of DecisionSpec."""
    if isinstance(decisions, dict):
        decisions = [DecisionSpec(k, k, tuple(v)) for k, v in decisions.items()]
    n = max((p.sample.shape[0] for p in params if p.sample is not None), default=1)
    train = SampleSet("training", n, params)
    if testing is not None and not isinstance(testing, SampleSet):
        m = max((p.sample.shape[0] for p in testing if p.sample is not None), default=1)
        testing = SampleSet("testing", m, testing)
    return ProblemBundle(name, "toy problem", decisions,
                         TruthSpec(list(constraints), objective, sense), train, testing)


def raw_model(d0, dx, cp, Cpx, sense="min", relation="le", lb=None, ub=None):
    """One-row LinearModel from split parts (objective = 0)."""
    dx, cp, Cpx = np.asarray(dx, float), np.asarray(cp, float), np.asarray(Cpx, float)
    nx, np_ = dx.size, cp.size
    s = Space(np_, nx)
    row = np.concatenate([[d0], cp, dx, Cpx.ravel()])
    return LinearModel(
        sense=sense, space=s, objective=sp.csr_matrix((1, s.K)), rows=sp.csr_matrix(row[None, :]),
        relation=np.array([relation], dtype=object), origin=np.array([0]),
        hoisted=np.array([False]), decisions=[Block("x", (nx,), 0)], params=[Block("p", (np_,), 0)],
        lb=np.full(nx, -np.inf) if lb is None else np.asarray(lb, float),
        ub=np.full(nx, np.inf) if ub is None else np.asarray(ub, float),
        integer=np.zeros(nx, dtype=bool), nominal=np.zeros(np_), param_shapes={"p": (np_,)})


def row_worst_case(lp, x, label):
    """Smallest value of ``A_ub[row] z - b_ub[row]`` over auxiliaries, decisions fixed at x.

    ``label`` picks the row; auxiliary rows (other labels) stay enforced.
    """
    from ddopt.lp import ConcreteLP, solve_lp
    rows = [i for i, lab in enumerate(lp.ub_labels) if lab == label]
    assert len(rows) == 1, rows
    r = rows[0]
    keep = [i for i in range(lp.A_ub.shape[0]) if i != r]
    nd = lp.n_decisions
    lb, ub = lp.lb.copy(), lp.ub.copy()
    lb[:nd] = ub[:nd] = x
    sub = ConcreteLP("min", lp.A_ub[r], -lp.b_ub[r], lp.A_ub[keep], lp.b_ub[keep], lb=lb, ub=ub)
    sol = solve_lp(sub)
    assert sol.ok, sol.status
    return sol.objective
