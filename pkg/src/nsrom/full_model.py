"""Full finite element model of the parameterized driven cavity and its
Picard solver."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .grid_fem import (
    GridSpec,
    assemble_convection,
    assemble_divergence,
    assemble_enrichment_laplacian,
    assemble_viscosity_blocks,
    boundary_interpolant,
    build_mesh,
    pressure_area_vector,
)
from .linalg_core import SingularMatrixError, SparseLU

log = logging.getLogger(__name__)

XI_LOW, XI_HIGH = 0.01, 1.0


class PicardConvergenceError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class FullState:
    """Solution of the full model.

    ``u`` is the full velocity including boundary values; ``p`` the pressure.
    """

    u: np.ndarray
    p: np.ndarray
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    mean_pressure_history: list = field(default_factory=list)

    @property
    def relative_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else np.inf


class CavityProblem:
    """Assembled affine operators for the driven cavity on one grid.

    ``A(xi) = sum_i xi[i] A_i`` with ``A_i`` supported on subdomain ``i``.
    Boundary rows/columns are eliminated; interior unknowns are
    ``mesh.interior_dofs``.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.mesh = mesh = build_mesh(spec)
        self.A_blocks = assemble_viscosity_blocks(mesh)
        self.B = assemble_divergence(mesh)
        self.u_bc = boundary_interpolant(mesh)
        self.pbar = pressure_area_vector(mesh)
        self.f = np.zeros(mesh.n_vel)

        I, Bd = mesh.interior_dofs, mesh.boundary_dofs
        self.interior = I
        self.A_II = [Ai[I][:, I].tocsr() for Ai in self.A_blocks]
        self.A_IB_ubc = [Ai[I][:, Bd] @ self.u_bc[Bd] for Ai in self.A_blocks]
        self.B_I = self.B[:, I].tocsr()
        self.B_B_ubc = self.B[:, Bd] @ self.u_bc[Bd]
        self.residual_evaluations = 0
        self._laplacian = None

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_laplacian"] = None  # SuperLU objects do not pickle
        return state

    # sizes -----------------------------------------------------------------
    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def n_u(self) -> int:
        """Number of interior velocity unknowns."""
        return len(self.interior)

    @property
    def n_p(self) -> int:
        return self.mesh.n_p

    @property
    def mean_parameter(self) -> np.ndarray:
        return np.full(self.m, 0.5 * (XI_LOW + XI_HIGH))

    def check_parameter(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).ravel()
        if xi.shape != (self.m,):
            raise ValueError(f"xi must have {self.m} entries, got {xi.shape}")
        if np.any(xi <= 0.0):
            raise ValueError("viscosity parameters must be positive")
        return xi

    # operators -------------------------------------------------------------
    def stiffness(self, xi) -> sp.csr_matrix:
        xi = self.check_parameter(xi)
        return sum(x * Ai for x, Ai in zip(xi, self.A_blocks))

    def stiffness_interior(self, xi) -> sp.csr_matrix:
        xi = self.check_parameter(xi)
        return sum(x * Ai for x, Ai in zip(xi, self.A_II))

    def rhs(self, xi) -> np.ndarray:
        """Data vector ``b(xi) = [f_I - A_IB u_bc; -B_B u_bc]``."""
        xi = self.check_parameter(xi)
        bu = self.f[self.interior] - sum(x * a for x, a in zip(xi, self.A_IB_ubc))
        return np.concatenate([bu, -self.B_B_ubc])

    def lift_velocity(self, u_in) -> np.ndarray:
        u = self.u_bc.copy()
        u[self.interior] += u_in
        return u

    def nonlinear_term(self, u) -> np.ndarray:
        """Interior rows of ``N(u) u`` for a full velocity vector ``u``."""
        return (assemble_convection(self.mesh, u) @ u)[self.interior]

    def residual(self, u, p, xi):
        """Full residual ``G(z)`` and its size relative to ``||b(xi)||``.

        ``u`` is the full velocity vector including boundary values.
        """
        xi = self.check_parameter(xi)
        self.residual_evaluations += 1
        A = self.stiffness(xi)
        N = assemble_convection(self.mesh, u)
        ru = (A @ u + N @ u + self.B.T @ p - self.f)[self.interior]
        rp = self.B @ u
        G = np.concatenate([ru, rp])
        return G, np.linalg.norm(G) / np.linalg.norm(self.rhs(xi))

    def residual_indicator(self, u, p, xi) -> float:
        return self.residual(u, p, xi)[1]

    # augmented saddle-point systems ----------------------------------------
    def saddle_matrix(self, xi, convection=None, augment=True) -> sp.csr_matrix:
        """``[[A + N, B^T, 0], [B, 0, pbar], [0, pbar^T, 0]]`` on interior dofs.

        The border enforces zero mean pressure through a Lagrange multiplier.
        """
        F = self.stiffness_interior(xi)
        if convection is not None:
            F = F + convection
        BI = self.B_I
        if not augment:
            return sp.bmat([[F, BI.T], [BI, None]], format="csc")
        pb = sp.csr_matrix(self.pbar[:, None])
        return sp.bmat(
            [[F, BI.T, None], [BI, None, pb], [None, pb.T, None]], format="csc"
        )

    def solve_stokes(self, xi):
        """Stokes solve used to start the Picard iteration.

        Returns the interior velocity and the pressure (zero mean).
        """
        xi = self.check_parameter(xi)
        K = self.saddle_matrix(xi)
        rhs = np.concatenate([self.rhs(xi), [0.0]])
        try:
            sol = SparseLU(K).solve(rhs)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"augmented Stokes system still singular: {exc}") from exc
        nu = self.n_u
        return sol[:nu], sol[nu : nu + self.n_p]

    def picard(self, xi, delta=1e-8, maxit=50, divergence_factor=1e4) -> FullState:
        """Picard iteration started from the Stokes solution.

        Stops once ``||G(z)|| < delta * ||b(xi)||``.  Raises
        :class:`PicardConvergenceError` after ``maxit`` steps or if the
        residual grows by ``divergence_factor``.
        """
        xi = self.check_parameter(xi)
        if delta <= 0:
            raise ValueError("delta must be positive")
        u_in, p = self.solve_stokes(xi)
        u = self.lift_velocity(u_in)
        state = FullState(u=u, p=p)
        G, rel = self.residual(u, p, xi)
        state.residual_history.append(rel)
        state.mean_pressure_history.append(float(self.pbar @ p))
        I, nu = self.interior, self.n_u
        for it in range(1, maxit + 1):
            N = assemble_convection(self.mesh, u)[I][:, I]
            K = self.saddle_matrix(xi, convection=N)
            d = SparseLU(K).solve(np.concatenate([-G, [0.0]]))
            u = u.copy()
            u[I] += d[:nu]
            p = p + d[nu : nu + self.n_p]
            G, rel = self.residual(u, p, xi)
            state.u, state.p, state.iterations = u, p, it
            state.residual_history.append(rel)
            state.mean_pressure_history.append(float(self.pbar @ p))
            log.debug("full picard %d: rel residual %.3e", it, rel)
            if rel < delta:
                state.converged = True
                return state
            if not np.isfinite(rel) or rel > divergence_factor * state.residual_history[0]:
                break
        raise PicardConvergenceError(
            f"full Picard iteration did not reach {delta:g} after {state.iterations} steps "
            f"(last residual {state.relative_residual:.3e})",
            state,
        )

    # enrichment --------------------------------------------------------------
    def enrichment_velocity(self, p) -> np.ndarray:
        """Supremizer ``r``: ``(grad r, grad v) = (p, div v)`` for all interior ``v``."""
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n_p,):
            raise ValueError(f"pressure must have length {self.n_p}")
        if self._laplacian is None:
            self._laplacian = SparseLU(assemble_enrichment_laplacian(self.mesh))
        # (p, div phi_j) = -(B^T p)_j
        return self._laplacian.solve(-(self.B_I.T @ p))


def solve_stokes_full(problem: CavityProblem, xi):
    return problem.solve_stokes(xi)


def picard_full(problem: CavityProblem, xi, delta=1e-8, **kwargs) -> FullState:
    return problem.picard(xi, delta, **kwargs)


def residual_full(problem: CavityProblem, u, p, xi):
    return problem.residual(u, p, xi)


def save_snapshot(path, state: FullState, xi, problem: CavityProblem, **meta) -> None:
    """Write ``<path>.npz`` with the arrays and ``<path>.json`` with metadata."""
    path = Path(path)
    np.savez(path.with_suffix(".npz"), u=state.u, p=state.p, xi=np.asarray(xi))
    info = {
        "xi": [float(x) for x in np.asarray(xi)],
        "n": problem.spec.n,
        "n_d": problem.spec.n_d,
        "relative_residual": float(state.relative_residual),
        "iterations": int(state.iterations),
        **meta,
    }
    path.with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True))


def load_snapshot(path):
    path = Path(path)
    data = np.load(path.with_suffix(".npz"))
    info = json.loads(path.with_suffix(".json").read_text())
    state = FullState(u=data["u"], p=data["p"], iterations=info["iterations"], converged=True)
    state.residual_history.append(info["relative_residual"])
    return state, info
