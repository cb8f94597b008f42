"""Brute-force LP oracles for small instances, independent of the simplex code."""

import itertools

import numpy as np


def vertex_enumeration(c, rows, rels, rhs, tol=1e-9):
    """Minimum of c @ w over w in [0,1]^n with rows @ w (<= or =) rhs.

    Every vertex of the feasible polytope has n - k coordinates at a bound and
    k free ones pinned by k active general constraints, so enumerating
    (active set, free set, bound pattern) covers all of them. Returns
    (value, w) or (None, None) if infeasible.
    """
    c = np.asarray(c, float)
    rows = np.atleast_2d(np.asarray(rows, float))
    rhs = np.asarray(rhs, float)
    n, m = len(c), len(rows)
    eq = [i for i, r in enumerate(rels) if r == "="]
    ineq = [i for i, r in enumerate(rels) if r != "="]
    best, arg = None, None
    for k in range(0, min(m, n) + 1):
        for extra in itertools.combinations(ineq, k - len(eq)) if k >= len(eq) else []:
            active = list(eq) + list(extra)
            if len(active) != k:
                continue
            for free in itertools.combinations(range(n), k):
                fixed = [j for j in range(n) if j not in free]
                pats = np.array(list(itertools.product((0.0, 1.0), repeat=len(fixed))), dtype=float).reshape(2 ** len(fixed), len(fixed))
                w = np.zeros((len(pats), n))
                w[:, fixed] = pats
                if k:
                    a_free = rows[np.ix_(active, free)]
                    if abs(np.linalg.det(a_free)) < 1e-12:
                        continue
                    r = rhs[active][None, :] - pats @ rows[np.ix_(active, fixed)].T
                    w[:, free] = np.linalg.solve(a_free, r.T).T
                ok = np.all((w >= -tol) & (w <= 1 + tol), axis=1)
                lhs = w @ rows.T
                for i in range(m):
                    ok &= (np.abs(lhs[:, i] - rhs[i]) <= tol) if rels[i] == "=" else (lhs[:, i] <= rhs[i] + tol)
                if not ok.any():
                    continue
                vals = w[ok] @ c
                j = int(np.argmin(vals))
                if best is None or vals[j] < best:
                    best, arg = float(vals[j]), w[ok][j]
    return best, arg


def grid_search(c, rows, rels, rhs, step=0.05, slack=False):
    """Minimum of c @ w over the lattice {0, step, ..., 1}^n; None if no lattice point qualifies.

    With ``slack=False`` constraints are exact, so the result upper-bounds the
    LP optimum. With ``slack=True`` each constraint may be violated by the
    largest amount that rounding two coordinates to the lattice can cause;
    an optimal vertex has at most two fractional coordinates (two general
    constraints), so its rounding qualifies and the result is at most the LP
    optimum plus ``step/2`` times the two largest ``|c|``.
    """
    c = np.asarray(c, float)
    rows = np.atleast_2d(np.asarray(rows, float))
    levels = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    grid = np.array(list(itertools.product(levels, repeat=len(c))))
    lhs = grid @ rows.T
    ok = np.ones(len(grid), bool)
    for i, r in enumerate(rels):
        tol = 1e-12
        if slack:
            tol += step / 2 * np.sort(np.abs(rows[i]))[-2:].sum()
        ok &= (np.abs(lhs[:, i] - rhs[i]) <= tol) if r == "=" else (lhs[:, i] <= rhs[i] + tol)
    if not ok.any():
        return None
    return float((grid[ok] @ c).min())


def relaxed_instance(table, beta, gamma):
    u_min = float(np.minimum(table.i_util, 0).sum())
    return (np.ones(len(table.i_fair)), [table.i_fair, table.i_util], ["<=", "<="],
            [-(1 - beta) * table.fair_gap_surrogate, gamma * u_min])


def budgeted_instance(table, alpha):
    n = len(table.i_fair)
    return table.i_fair, [table.i_util, np.ones(n)], ["<=", "<="], [0.0, alpha * n]
