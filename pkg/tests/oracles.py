"""Slow, literal re-executions of the greedy index selections.

Written independently of ``nsrom.deim`` with plain Python loops and explicit
pseudoinverses.  Ties go to the lowest row.
"""
import numpy as np


def _argmax_lowest(values, banned=()):
    best, best_val = None, -np.inf
    for k, val in enumerate(values):
        if k in banned:
            continue
        if val > best_val:
            best, best_val = k, val
    return best


def brute_deim(V):
    V = np.asarray(V, dtype=float)
    rows = [_argmax_lowest(np.abs(V[:, 0]))]
    for i in range(1, V.shape[1]):
        Vh = V[:, :i]
        PtV = np.array([Vh[r] for r in rows])
        c = np.linalg.inv(PtV) @ np.array([V[r, i] for r in rows])
        resid = V[:, i] - Vh @ c
        rows.append(_argmax_lowest(np.abs(resid)))
    return rows


def brute_gappy(V, n_g):
    V = np.asarray(V, dtype=float)
    N, n_v = V.shape
    n_it = min(n_v, n_g)
    nc_min, na_min = n_v // n_it, n_g // n_v
    P = []
    consumed = 0  # number of columns already in V_hat
    for i in range(1, n_it + 1):
        n_c = nc_min + (1 if i <= n_v % n_it else 0)
        n_a = na_min + (1 if i <= n_g % n_v else 0)
        cols = list(range(consumed, consumed + n_c))
        if i == 1:
            r = [sum(V[k, q] ** 2 for q in cols) for k in range(N)]
            for _ in range(n_a):
                rho = _argmax_lowest(r, banned=set(P))
                P.append(rho)
        else:
            for _ in range(n_a):
                Vh = V[:, :consumed]
                r = [0.0] * N
                for q in cols:
                    alpha = np.linalg.pinv(Vh[P]) @ V[P, q]
                    R = V[:, q] - Vh @ alpha
                    for k in range(N):
                        r[k] += R[k] ** 2
                P.append(_argmax_lowest(r, banned=set(P)))
        consumed += n_c
    return P


def random_orthonormal(rng, N, n_v):
    Q, _ = np.linalg.qr(rng.standard_normal((N, n_v)))
    return Q
