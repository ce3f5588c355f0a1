"""Interpolation index selection (DEIM and gappy POD) and the precomputed
hyper-reduction operator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_fem import Mesh, SampleMesh, build_sample_mesh
from .linalg_core import DenseLU, PseudoInverse, RankDeficientError, SingularMatrixError

__all__ = [
    "InterpolationSelection",
    "DeimOperator",
    "deim_select",
    "gappy_select",
    "gappy_schedule",
    "build_deim_operator",
]


@dataclass(frozen=True)
class InterpolationSelection:
    indices: np.ndarray
    method: str  # "deim" or "gappy"

    def __len__(self):
        return len(self.indices)


def deim_select(V) -> InterpolationSelection:
    """Greedy DEIM indices for the columns of ``V``.

    Ties in the argmax go to the lowest index.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError("V must be a non-empty 2-d array")
    idx = [int(np.argmax(np.abs(V[:, 0])))]
    if V[idx[0], 0] == 0.0:
        raise RankDeficientError("first basis vector is zero")
    for i in range(1, V.shape[1]):
        c = np.linalg.solve(V[idx, :i], V[idx, i])
        r = V[:, i] - V[:, :i] @ c
        k = int(np.argmax(np.abs(r)))
        if np.abs(r[k]) <= 1e-14 * max(np.linalg.norm(V[:, i]), 1.0):
            raise RankDeficientError(
                f"DEIM residual vanished at column {i}; V is rank deficient"
            )
        idx.append(k)
    return InterpolationSelection(np.asarray(idx, dtype=np.int64), "deim")


def gappy_schedule(n_v: int, n_g: int):
    """Per-iteration (basis vectors consumed, indices added) for gappy POD."""
    n_it = min(n_v, n_g)
    nc_min, na_min = n_v // n_it, n_g // n_v
    out = []
    for i in range(1, n_it + 1):
        n_c = nc_min + (1 if i <= n_v % n_it else 0)
        n_a = na_min + (1 if i <= n_g % n_v else 0)
        out.append((n_c, n_a))
    return out


def _lstsq_residuals(V_hat, idx, targets):
    """Residuals ``t - V_hat alpha`` with ``alpha`` fitting ``t`` at rows ``idx``."""
    PV = V_hat[idx]
    alpha, *_ = np.linalg.lstsq(PV, targets[idx], rcond=None)
    return targets - V_hat @ alpha


def gappy_select(V, n_g: int) -> InterpolationSelection:
    """Gappy-POD greedy selection of ``n_g`` rows for the columns of ``V``.

    Basis vectors are consumed in blocks and each block adds a batch of
    indices chosen by the largest squared residual summed over the block.
    Previously chosen rows are never chosen again.
    """
    V = np.asarray(V, dtype=float)
    N, n_v = V.shape
    if n_g < 1:
        raise ValueError("n_g must be at least 1")
    if n_g > N:
        raise ValueError(f"cannot select {n_g} indices from {N} rows")
    chosen = np.zeros(N, dtype=bool)
    idx: list[int] = []

    def pick(r):
        r = np.where(chosen, -np.inf, r)
        k = int(np.argmax(r))
        chosen[k] = True
        idx.append(k)
        return k

    n_b = 0
    for i, (n_c, n_a) in enumerate(gappy_schedule(n_v, n_g)):
        block = V[:, n_b : n_b + n_c]
        if i == 0:
            r = np.sum(block**2, axis=1)
            for _ in range(n_a):
                pick(r)
        else:
            V_hat = V[:, :n_b]
            R = _lstsq_residuals(V_hat, idx, block)
            r = np.sum(R**2, axis=1)
            for _ in range(n_a):
                pick(r)
                R = _lstsq_residuals(V_hat, idx, block)
                r = np.sum(R**2, axis=1)
        n_b += n_c
    return InterpolationSelection(np.asarray(idx, dtype=np.int64), "gappy")


@dataclass(frozen=True, eq=False)
class DeimOperator:
    """``F ~ V (P^T V)^{-1} P^T F`` (pseudoinverse for gappy selections) with
    ``L^T = Q_u^T V (P^T V)^{-1}`` precomputed.

    ``rows`` are the selected indices mapped to global velocity dofs and
    ``sample`` the elements needed to assemble them.
    """

    V: np.ndarray
    selection: InterpolationSelection
    LT: np.ndarray
    coeff: np.ndarray  # (P^T V)^{-1} or its pseudoinverse
    sample: SampleMesh | None = None
    rows: np.ndarray | None = None

    @property
    def indices(self):
        return self.selection.indices

    def approximate(self, F):
        """Interpolated approximation of ``F`` (columns allowed)."""
        return self.V @ (self.coeff @ np.asarray(F)[self.indices])

    def error_bound(self, F) -> float:
        """``||(P^T V)^{-1}||_2 ||(I - V V^T) F||_2``."""
        F = np.asarray(F, dtype=float)
        proj = F - self.V @ (self.V.T @ F)
        return np.linalg.norm(self.coeff, 2) * np.linalg.norm(proj)


def build_deim_operator(Q_u, V, selection: InterpolationSelection, mesh: Mesh | None = None,
                        interior_dofs=None) -> DeimOperator:
    """Precompute ``L^T`` and, when a mesh is given, the sample mesh.

    ``interior_dofs`` maps positions in ``V`` (interior velocity rows) to
    global velocity dofs; it defaults to ``mesh.interior_dofs``.
    """
    V = np.asarray(V, dtype=float)
    idx = selection.indices
    if len(np.unique(idx)) != len(idx):
        raise ValueError("interpolation indices must be distinct")
    PV = V[idx]
    if selection.method == "deim":
        if PV.shape[0] != PV.shape[1]:
            raise ValueError("DEIM needs as many indices as basis vectors")
        try:
            coeff = DenseLU(PV).solve(np.eye(PV.shape[0]))
        except SingularMatrixError as exc:
            raise RankDeficientError(f"P^T V is singular: {exc}") from exc
    else:
        coeff = PseudoInverse(PV).matrix
    LT = (np.asarray(Q_u).T @ V) @ coeff
    sample = rows = None
    if mesh is not None:
        interior = mesh.interior_dofs if interior_dofs is None else interior_dofs
        rows = np.asarray(interior)[idx]
        sample = build_sample_mesh(mesh, rows)
    return DeimOperator(V=V, selection=selection, LT=LT, coeff=coeff, sample=sample, rows=rows)
