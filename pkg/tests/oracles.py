"""Independent reference computations used by the test suite."""

from itertools import combinations

import numpy as np


def enumerate_qp(H, f, G, w, tol=1e-9):
    """Brute-force KKT search over active sets, smallest sets first.

    For a strictly convex QP the first point that is primal feasible with
    nonnegative multipliers is the unique minimizer. Returns None when no
    active set yields a KKT point (infeasible problem).
    """
    H = np.asarray(H, float)
    f = np.asarray(f, float)
    G = np.asarray(G, float).reshape(-1, len(f))
    w = np.asarray(w, float)
    n, q = len(f), len(w)
    for size in range(0, min(n, q) + 1):
        for S in combinations(range(q), size):
            S = list(S)
            K = np.zeros((n + size, n + size))
            K[:n, :n] = H
            K[:n, n:] = G[S].T
            K[n:, :n] = G[S]
            rhs = np.concatenate([-f, w[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if size and np.linalg.cond(K) > 1e12:
                continue
            z, lam = sol[:n], sol[n:]
            if np.all(lam >= -tol) and np.all(G @ z <= w + tol * (1 + np.abs(w))):
                return z
    return None


def random_qp(rng, n_z=None, n_q=None):
    """Strictly convex random QP with a known strictly feasible point."""
    n_z = n_z or int(rng.integers(1, 9))
    n_q = int(rng.integers(0, 17)) if n_q is None else n_q
    M = rng.standard_normal((n_z, n_z))
    H = M.T @ M + np.eye(n_z)
    f = 3.0 * rng.standard_normal(n_z)
    G = rng.standard_normal((n_q, n_z))
    z0 = 0.3 * rng.standard_normal(n_z)
    w = G @ z0 + rng.uniform(0.05, 1.0, n_q)
    return H, f, G, w, z0


def taylor_expm(M, terms=40):
    """exp(M) by a truncated Taylor series with scaling and squaring."""
    M = np.asarray(M, float)
    norm = np.abs(M).sum(axis=1).max() if M.size else 0.0
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0.5 else 0
    X = M / 2.0**s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ X / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def taylor_zoh(A, B, dt, terms=40):
    """ZOH pair via the block-matrix exponential, using the Taylor oracle."""
    n, m = B.shape
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = A
    blk[:n, n:] = B
    E = taylor_expm(blk * dt, terms)
    return E[:n, :n], E[:n, n:]
