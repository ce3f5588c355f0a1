"""Reduced bases, affine reduced operators and reduced convection terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deim import DeimOperator
from .full_model import CavityProblem
from .grid_fem import assemble_convection, sampled_convection_local
from .linalg_core import mgs_augment

__all__ = [
    "ReducedBasis",
    "AffineReducedOperator",
    "FullConvection",
    "DeimConvection",
    "lift",
]


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Orthonormal velocity basis ``Q_u`` (interior dofs) and pressure basis ``Q_p``.

    ``n_snapshots`` counts the full solutions used, the mean-parameter one
    included, so ``k = 3 * n_snapshots`` when nothing was dropped.
    """

    Q_u: np.ndarray
    Q_p: np.ndarray
    n_snapshots: int = 0
    enriched: bool = True

    @property
    def k_u(self) -> int:
        return self.Q_u.shape[1]

    @property
    def k_p(self) -> int:
        return self.Q_p.shape[1]

    @property
    def k(self) -> int:
        return self.k_u + self.k_p

    @classmethod
    def empty(cls, n_u: int, n_p: int, enriched=True):
        return cls(np.zeros((n_u, 0)), np.zeros((n_p, 0)), 0, enriched)

    def augmented(self, u_in, p, r=None, drop_tol=1e-10) -> "ReducedBasis":
        Q_u = mgs_augment(self.Q_u, u_in, drop_tol)
        if r is not None:
            Q_u = mgs_augment(Q_u, r, drop_tol)
        Q_p = mgs_augment(self.Q_p, p, drop_tol)
        return ReducedBasis(Q_u, Q_p, self.n_snapshots + 1, self.enriched and r is not None)


class AffineReducedOperator:
    """Parameter-independent projections of the affine blocks.

    ``stokes_matrix(xi) = Q^T [[A(xi), B^T], [B, 0]] Q`` and
    ``rhs(xi) = Q^T b(xi)`` are formed by weighted sums of small matrices.
    """

    def __init__(self, problem: CavityProblem, basis: ReducedBasis):
        Q_u, Q_p = basis.Q_u, basis.Q_p
        self.basis = basis
        self.A_r = [Q_u.T @ (Ai @ Q_u) for Ai in problem.A_II]
        self.B_r = Q_p.T @ (problem.B_I @ Q_u)
        self.a_bc = [Q_u.T @ a for a in problem.A_IB_ubc]
        self.b_bc = Q_p.T @ problem.B_B_ubc
        self.f_r = Q_u.T @ problem.f[problem.interior]

    @property
    def k_u(self):
        return self.basis.k_u

    @property
    def k(self):
        return self.basis.k

    def velocity_matrix(self, xi):
        return sum(x * Ar for x, Ar in zip(xi, self.A_r))

    def stokes_matrix(self, xi, velocity_matrix=None):
        ku, kp = self.basis.k_u, self.basis.k_p
        M = np.zeros((ku + kp, ku + kp))
        M[:ku, :ku] = self.velocity_matrix(xi) if velocity_matrix is None else velocity_matrix
        M[:ku, ku:] = self.B_r.T
        M[ku:, :ku] = self.B_r
        return M

    def rhs(self, xi):
        bu = self.f_r - sum(x * a for x, a in zip(xi, self.a_bc))
        return np.concatenate([bu, -self.b_bc])


def lift(u_hat, p_hat, basis: ReducedBasis, problem: CavityProblem):
    """Full velocity ``u_bc + Q_u u_hat`` and pressure ``Q_p p_hat``."""
    return problem.lift_velocity(basis.Q_u @ u_hat), basis.Q_p @ p_hat


class FullConvection:
    """Galerkin-projected convection ``Q_u^T N(u) Q_u`` assembled on the whole mesh."""

    model = "reduced"

    def __init__(self, problem: CavityProblem, basis: ReducedBasis):
        self.problem = problem
        self.basis = basis

    def at_velocity(self, u):
        """Reduced convection matrix and nonlinear vector for a full velocity ``u``."""
        I = self.problem.interior
        N = assemble_convection(self.problem.mesh, u)[I]
        Q = self.basis.Q_u
        C = Q.T @ (N[:, I] @ Q)
        g = Q.T @ (N @ u)
        return C, g, self.problem.mesh.n_el

    def evaluate(self, u_hat):
        u = self.problem.lift_velocity(self.basis.Q_u @ u_hat)
        return self.at_velocity(u)


class DeimConvection:
    """``L^T P^T N(u) Q_u`` with the sampled rows assembled on the sample mesh.

    Everything touched per evaluation lives on the sample-mesh dofs, so the
    cost does not depend on the mesh size.
    """

    model = "deim"

    def __init__(self, problem: CavityProblem, basis: ReducedBasis, deim: DeimOperator):
        if deim.sample is None:
            raise ValueError("DEIM operator has no sample mesh")
        self.problem = problem
        self.basis = basis
        self.deim = deim
        local = deim.sample.local_dofs
        pos = problem.mesh.interior_position[local]
        self.Q_local = np.zeros((len(local), basis.k_u))
        inner = pos >= 0
        self.Q_local[inner] = basis.Q_u[pos[inner]]
        self.ubc_local = problem.u_bc[local]

    def _from_local(self, u_loc):
        Ns = sampled_convection_local(self.problem.mesh, self.deim.sample, u_loc)
        C = self.deim.LT @ (Ns @ self.Q_local)
        g = self.deim.LT @ (Ns @ u_loc)
        return C, g, self.deim.sample.n_elements

    def at_velocity(self, u):
        return self._from_local(np.asarray(u)[self.deim.sample.local_dofs])

    def evaluate(self, u_hat):
        return self._from_local(self.ubc_local + self.Q_local @ u_hat)
