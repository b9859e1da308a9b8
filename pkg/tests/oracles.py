"""Brute-force reference solvers used to check the real implementations."""
from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog


def vertex_enumeration(c, A_ub, b_ub, A_eq, b_eq, lb, ub, sense="min", tol=1e-9):
    """Best objective over all basic feasible points of a bounded LP (None if infeasible)."""
    n = len(c)
    rows, rhs = [], []
    for a, b in zip(A_ub, b_ub):
        rows.append(a); rhs.append(b)
    for j in range(n):
        e = np.zeros(n); e[j] = 1
        if np.isfinite(lb[j]):
            rows.append(e); rhs.append(lb[j])
        if np.isfinite(ub[j]):
            rows.append(e); rhs.append(ub[j])
    A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
    rows = np.array(rows + list(A_eq)).reshape(-1, n)
    rhs = np.array(rhs + list(b_eq), dtype=float)
    best = None
    for idx in itertools.combinations(range(len(rows)), n):
        M = rows[list(idx)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs[list(idx)])
        if len(A_ub) and np.any(np.asarray(A_ub) @ x - b_ub > tol):
            continue
        if np.any(x < lb - tol) or np.any(x > ub + tol):
            continue
        if A_eq.shape[0] and np.any(np.abs(A_eq @ x - b_eq) > tol):
            continue
        v = float(np.dot(c, x))
        if best is None or (v < best if sense == "min" else v > best):
            best = v
    return best


def binary_enumeration(c, A_ub, b_ub, sense="max"):
    n = len(c)
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=n):
        x = np.array(bits)
        if np.all(A_ub @ x <= b_ub + 1e-9):
            v = float(c @ x)
            if best is None or (v > best if sense == "max" else v < best):
                best = v
    return best


def box_vertex_max(d0, dx, cp, Cpx, lower, upper, x):
    """max over box vertices of d0 + dx.x + (cp + Cpx x).p."""
    coef = cp + Cpx @ x
    base = d0 + dx @ x
    best = -np.inf
    for v in itertools.product(*zip(lower, upper)):
        best = max(best, base + coef @ np.array(v))
    return best


def ot_worst_expectation(c, d, samples, eps, ground="L1", steps=50, reach=2):
    """Discretized optimal-transport LP for sup E[d + c.p] over a type-1 Wasserstein ball.

    Each sample may move its mass to grid points within ``reach * eps``
    (per coordinate) at step ``eps / steps``. Returns (value, step).
    """
    samples = np.atleast_2d(samples)
    N, dim = samples.shape
    h = eps / steps
    ax = np.arange(-reach * steps, reach * steps + 1) * h
    G = np.stack(np.meshgrid(*[ax] * dim, indexing="ij"), -1).reshape(-1, dim)
    dist = np.abs(G).sum(1) if ground == "L1" else np.abs(G).max(1)
    M = G.shape[0]
    gain = np.concatenate([-(d + (samples[i] + G) @ c) / N for i in range(N)])
    cost = np.tile(dist / N, N)
    rows = sp.kron(sp.eye(N), np.ones((1, M)), format="csr")
    res = linprog(gain, A_ub=cost[None, :], b_ub=[eps], A_eq=rows, b_eq=np.ones(N),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun, h


def vertex_enumeration_batched(c, A_ub, b_ub, A_eq, b_eq, lb, ub, sense="min", tol=1e-9):
    """Same as :func:`vertex_enumeration`, solving all bases in one batched call."""
    c = np.asarray(c, float)
    n = c.size
    rows, rhs = list(np.asarray(A_ub, float).reshape(-1, n)), list(np.asarray(b_ub, float))
    for j in range(n):
        e = np.zeros(n); e[j] = 1
        for bound in (lb[j], ub[j]):
            if np.isfinite(bound):
                rows.append(e); rhs.append(bound)
    A_eq = np.asarray(A_eq, float).reshape(-1, n)
    rows = np.array(rows + list(A_eq))
    rhs = np.array(rhs + list(b_eq), dtype=float)
    idx = np.array(list(itertools.combinations(range(len(rows)), n)))
    if idx.size == 0:
        return None
    M = rows[idx]
    ok = np.abs(np.linalg.det(M)) > 1e-10
    M, r = M[ok], rhs[idx[ok]]
    if len(M) == 0:
        return None
    X = np.linalg.solve(M, r[..., None])[..., 0]
    feas = np.all(X >= lb - tol, axis=1) & np.all(X <= ub + tol, axis=1)
    if len(A_ub):
        feas &= np.all(X @ np.asarray(A_ub, float).T - b_ub <= tol, axis=1)
    if A_eq.shape[0]:
        feas &= np.all(np.abs(X @ A_eq.T - b_eq) <= tol, axis=1)
    if not feas.any():
        return None
    vals = X[feas] @ c
    return float(vals.min() if sense == "min" else vals.max())


def binary_enumeration_batched(c, A_ub, b_ub, sense="max"):
    n = len(c)
    X = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(float)
    feas = np.all(X @ np.asarray(A_ub).T <= np.asarray(b_ub) + 1e-9, axis=1)
    if not feas.any():
        return None
    v = X[feas] @ np.asarray(c, float)
    return float(v.max() if sense == "max" else v.min())
