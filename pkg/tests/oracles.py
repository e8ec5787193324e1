"""Independent reference implementations used only to check the package.

Each oracle recomputes an answer by a different route than the code under
test: exhaustive enumeration for integer optima, active-set vertex
enumeration for LPs, and central finite differences for gradients.
"""

import itertools

import numpy as np


def enumerate_binary_optimum(instance, tol=1e-6):
    """Exact optimum of a pure-binary instance by evaluating all 2^n points.

    Returns (objective, x) or (inf, None) when nothing is feasible.
    Vectorized: all assignments are checked in one matrix pass.
    """
    n = instance.n
    if n > 20:
        raise ValueError("enumeration oracle limited to 20 variables")
    X = np.array(list(itertools.product([0.0, 1.0], repeat=n)))
    ok = np.all(X >= instance.l - tol, axis=1) & np.all(X <= instance.u + tol, axis=1)
    act = X @ instance.A.T.toarray() if instance.m else np.zeros((X.shape[0], 0))
    if instance.m:
        ok &= np.all(act >= instance.b_l - tol, axis=1)
        ok &= np.all(act <= instance.b_u + tol, axis=1)
    if not ok.any():
        return np.inf, None
    objs = X @ instance.c + instance.objective_constant
    objs[~ok] = np.inf
    best = int(np.argmin(objs))
    return float(objs[best]), X[best]


def vertex_enumeration_lp(c, G, h, tol=1e-9):
    """Minimum of c @ x over {G x <= h} by enumerating basic feasible points.

    Every vertex of the polyhedron is the intersection of n linearly
    independent active rows; checks all row subsets.  Only for tiny bounded
    problems.
    """
    n = len(c)
    m = G.shape[0]
    best = np.inf
    best_x = None
    for rows in itertools.combinations(range(m), n):
        sub = G[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, h[list(rows)])
        if np.all(G @ x <= h + tol):
            v = float(c @ x)
            if v < best - 1e-12:
                best, best_x = v, x
    return best, best_x


def lp_to_onesided(problem):
    """Stack a two-sided box/row LP into (G, h) with G x <= h (finite rows only)."""
    rows = []
    rhs = []
    A = problem.A.toarray() if hasattr(problem.A, "toarray") else np.asarray(problem.A)
    for j in range(problem.m):
        if np.isfinite(problem.b_u[j]):
            rows.append(A[j])
            rhs.append(problem.b_u[j])
        if np.isfinite(problem.b_l[j]):
            rows.append(-A[j])
            rhs.append(-problem.b_l[j])
    for i in range(problem.n):
        e = np.zeros(problem.n)
        e[i] = 1.0
        if np.isfinite(problem.u[i]):
            rows.append(e.copy())
            rhs.append(problem.u[i])
        if np.isfinite(problem.l[i]):
            rows.append(-e)
            rhs.append(-problem.l[i])
    return np.array(rows), np.array(rhs)


def central_difference_gradient(f, params, h=1e-4):
    """Gradient of scalar f(params) by central differences, per array entry.

    ``params`` is a dict of numpy arrays; returns a matching dict.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f(params)
            flat[idx] = orig - h
            down = f(params)
            flat[idx] = orig
            gflat[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    """Worst-entry relative disagreement between two gradient dictionaries.

    Per entry |a - n| / max(1, |a|, |n|): plain relative error for entries
    of magnitude >= 1, absolute error below that (a near-zero derivative pair
    should not explode the ratio through division by almost nothing).
    """
    worst = 0.0
    for name in numeric:
        a = np.asarray(analytic[name], dtype=float)
        n = np.asarray(numeric[name], dtype=float)
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
