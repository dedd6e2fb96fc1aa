"""Independent brute-force oracles shared by the test-suite.

None of these import the solver paths they check.
"""

from __future__ import annotations

import itertools

import numpy as np


def enumerate_active_sets(Q, c, A_eq, b_eq, A_in, b_in, tol=1e-9):
    """Minimum of a convex QP by enumerating every active set of ``A_in x <= b_in``.

    For each subset the equality-constrained KKT system is solved by least
    squares; a candidate is kept when the system is consistent, the point is
    feasible and the active multipliers are nonnegative (a KKT certificate).
    Returns ``(value, x)`` of the best certified candidate, or ``(None, None)``.
    """
    Q = np.atleast_2d(np.asarray(Q, float))
    c = np.asarray(c, float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float)).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()
    A_in = np.zeros((0, n)) if A_in is None else np.atleast_2d(np.asarray(A_in, float)).reshape(-1, n)
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, float).ravel()
    me, mi = A_eq.shape[0], A_in.shape[0]
    best = (None, None)
    for size in range(0, min(mi, n) + 1):
        for S in itertools.combinations(range(mi), size):
            S = list(S)
            A_S = A_in[S]
            k = n + me + len(S)
            K = np.zeros((k, k))
            K[:n, :n] = Q
            K[:n, n:n + me] = A_eq.T
            K[n:n + me, :n] = A_eq
            K[:n, n + me:] = A_S.T
            K[n + me:, :n] = A_S
            rhs = np.concatenate([-c, b_eq, b_in[S]])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            scale = 1.0 + np.abs(rhs).max(initial=0.0)
            if np.abs(K @ sol - rhs).max(initial=0.0) > tol * scale * 100:
                continue
            x = sol[:n]
            lam = sol[n + me:]
            if np.any(A_in @ x - b_in > tol * scale * 100):
                continue
            if np.any(lam < -tol * scale * 100):
                continue
            val = 0.5 * x @ Q @ x + c @ x
            if best[0] is None or val < best[0]:
                best = (val, x)
    return best


def knapsack_lp_bruteforce(prices, energy, p_min, p_max):
    """Vertex enumeration for ``min prices'p  s.t. sum p = E, p_min <= p <= p_max``.

    A vertex of this polytope has at most one coordinate strictly between its
    bounds, so every vertex is reached by fixing each other coordinate at a bound.
    """
    prices = np.asarray(prices, float)
    n = prices.size
    best = None
    for free in range(n):
        others = [i for i in range(n) if i != free]
        for pattern in itertools.product((0, 1), repeat=len(others)):
            p = np.empty(n)
            for i, hi in zip(others, pattern):
                p[i] = p_max if hi else p_min
            p[free] = energy - p[others].sum()
            if p[free] < p_min - 1e-12 or p[free] > p_max + 1e-12:
                continue
            v = float(prices @ p)
            if best is None or v < best:
                best = v
    return best
