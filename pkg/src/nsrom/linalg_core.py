"""Linear algebra kernels: direct factorizations, SVD, least squares,
modified Gram-Schmidt and preconditioned BiCGStab."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

__all__ = [
    "SingularMatrixError",
    "RankDeficientError",
    "SparseLU",
    "DenseLU",
    "factorize",
    "sparse_lu_solve",
    "svd",
    "PseudoInverse",
    "pseudoinverse_factor",
    "mgs_augment",
    "BicgstabResult",
    "bicgstab",
]


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


class RankDeficientError(np.linalg.LinAlgError):
    pass


def _pivot_check(diag, n, what):
    d = np.abs(diag)
    dmax = d.max() if d.size else 0.0
    tol = max(n, 1) * np.finfo(float).eps * dmax
    bad = np.flatnonzero(d <= tol)
    if dmax == 0.0 or bad.size:
        k = int(bad[0]) if bad.size else 0
        raise SingularMatrixError(
            f"{what} is singular to working precision: pivot {k} has "
            f"|u_kk| = {d[k]:.3e} (max {dmax:.3e})",
            pivot=k,
        )


def _dense_zero_pivot(A, max_dense=6000):
    """Locate the first vanishing pivot when SuperLU rejects a matrix outright."""
    if A.shape[0] > max_dense:
        return None
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, _ = sla.lu_factor(A.toarray(), check_finite=False)
    d = np.abs(np.diag(lu))
    tol = A.shape[0] * np.finfo(float).eps * max(d.max(), np.finfo(float).tiny)
    bad = np.flatnonzero(d <= tol)
    return int(bad[0]) if bad.size else None


class SparseLU:
    """Sparse LU factorization (SuperLU) with a pivot-size singularity check."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self._A = A
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(f"sparse LU failed: {exc}", _dense_zero_pivot(A)) from exc
        _pivot_check(self._lu.U.diagonal(), A.shape[0], "sparse matrix")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        # one step of iterative refinement keeps the residual near machine precision
        r = b - self._A @ x
        return x + self._lu.solve(r)


class DenseLU:
    """Dense LU factorization (LAPACK getrf)."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        with warnings.catch_warnings():
            # the pivot check below reports singularity with more detail
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.lu, self.piv = sla.lu_factor(A, check_finite=True)
        _pivot_check(np.diag(self.lu), A.shape[0], "dense matrix")

    @classmethod
    def from_factors(cls, lu, piv):
        obj = cls.__new__(cls)
        obj.lu = np.asarray(lu, dtype=float)
        obj.piv = np.asarray(piv)
        obj.shape = obj.lu.shape
        return obj

    def solve(self, b):
        return sla.lu_solve((self.lu, self.piv), np.asarray(b, dtype=float))


def factorize(A):
    return SparseLU(A) if sp.issparse(A) else DenseLU(A)


def sparse_lu_solve(A, b):
    return SparseLU(A).solve(b)


def svd(M):
    """Thin SVD ``M = U diag(s) W^T`` with ``s`` in decreasing order."""
    U, s, Wt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    return U, s, Wt.T


class PseudoInverse:
    """Moore-Penrose pseudoinverse of a tall full-rank matrix, stored as
    ``W diag(1/s) U^T``."""

    def __init__(self, M, rcond: float = 1e-12):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        U, s, W = svd(M)
        if s.size == 0 or s[-1] <= rcond * s[0] or M.shape[0] < M.shape[1]:
            smin = s[-1] if s.size else 0.0
            smax = s[0] if s.size else 0.0
            raise RankDeficientError(
                f"matrix of shape {M.shape} is rank deficient "
                f"(sigma_min={smin:.3e}, sigma_max={smax:.3e})"
            )
        self.shape = M.shape
        self.U, self.s, self.W = U, s, W

    @property
    def matrix(self):
        return (self.W / self.s) @ self.U.T

    def solve(self, b):
        return self.W @ ((self.U.T @ b) / (self.s if np.ndim(b) == 1 else self.s[:, None]))


def pseudoinverse_factor(M, rcond: float = 1e-12) -> PseudoInverse:
    return PseudoInverse(M, rcond)


def mgs_augment(Q, v, drop_tol: float = 1e-10):
    """Append ``v`` to the orthonormal columns of ``Q`` by modified Gram-Schmidt.

    Two orthogonalization sweeps are made.  If what is left of ``v`` has
    norm below ``drop_tol * ||v||`` then ``Q`` is returned unchanged.
    """
    v = np.array(v, dtype=float).ravel()
    if Q is None or Q.size == 0:
        Q = np.zeros((v.size, 0))
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return Q
    w = v.copy()
    for _ in range(2):
        for j in range(Q.shape[1]):
            w -= (Q[:, j] @ w) * Q[:, j]
    nw = np.linalg.norm(w)
    if nw < drop_tol * nv:
        return Q
    return np.column_stack([Q, w / nw])


@dataclass
class BicgstabResult:
    x: np.ndarray
    iterations: int
    converged: bool
    flag: str  # "converged", "maxit" or "breakdown"
    residuals: list = field(default_factory=list)


def bicgstab(apply_A, b, apply_M_inv=None, tol=1e-9, maxit=500, ref_norm=None, x0=None):
    """Right-preconditioned BiCGStab.

    Stops when ``||b - A x|| < tol * ref_norm`` (``ref_norm`` defaults to
    ``||b||``).  An iteration consists of two half steps; convergence in the
    first half of iteration ``i`` is still reported as ``i`` iterations.
    On ``maxit`` or breakdown the best iterate is returned with ``converged``
    set to False.
    """
    if callable(apply_A):
        A = apply_A
    else:
        A = lambda y: apply_A @ y  # noqa: E731
    if apply_M_inv is None:
        Minv = lambda y: y  # noqa: E731
    elif callable(apply_M_inv):
        Minv = apply_M_inv
    else:
        Minv = apply_M_inv.solve

    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    ref = np.linalg.norm(b) if ref_norm is None else float(ref_norm)
    r = b - A(x) if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    if ref == 0.0 or rnorm < tol * ref:
        return BicgstabResult(x, 0, True, "converged", history)
    threshold = tol * ref

    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    best_x, best_norm = x.copy(), rnorm
    for it in range(1, maxit + 1):
        rho_new = r_hat @ r
        if abs(rho_new) <= np.finfo(float).tiny or omega == 0.0:
            return BicgstabResult(best_x, it - 1, False, "breakdown", history)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = Minv(p)
        v = A(p_hat)
        denom = r_hat @ v
        if denom == 0.0:
            return BicgstabResult(best_x, it - 1, False, "breakdown", history)
        alpha = rho / denom
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm < threshold:
            x = x + alpha * p_hat
            history.append(snorm)
            return BicgstabResult(x, it, True, "converged", history)
        s_hat = Minv(s)
        t = A(s_hat)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0.0 else 0.0
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        history.append(rnorm)
        if rnorm < best_norm:
            best_x, best_norm = x.copy(), rnorm
        if rnorm < threshold:
            return BicgstabResult(x, it, True, "converged", history)
    log.debug("bicgstab hit maxit=%d, residual %.3e", maxit, best_norm)
    return BicgstabResult(best_x, maxit, False, "maxit", history)
