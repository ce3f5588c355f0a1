"""Online Picard solvers for the reduced and DEIM models."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .deim import DeimOperator
from .full_model import CavityProblem
from .linalg_core import DenseLU, bicgstab
from .rom import (
    AffineReducedOperator,
    DeimConvection,
    FullConvection,
    ReducedBasis,
    lift,
)

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "offline-stokes", "online-stokes", "offline-ns", "online-ns")


class ReducedConvergenceError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class KrylovError(RuntimeError):
    pass


@dataclass
class OnlineConfig:
    model: str = "deim"  # "reduced" or "deim"
    linear_solver: str = "direct"  # "direct" or "bicgstab"
    preconditioner: str = "none"
    delta: float = 1e-8
    krylov_tol: float = 1e-9
    krylov_maxit: int = 500
    maxit: int = 50

    def __post_init__(self):
        if self.model not in ("reduced", "deim"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.linear_solver not in ("direct", "bicgstab"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class OnlineReport:
    u_hat: np.ndarray
    p_hat: np.ndarray
    u: np.ndarray | None = None
    p: np.ndarray | None = None
    model: str = ""
    converged: bool = False
    nonlinear_iterations: int = 0
    stokes_iterations: int = 0
    linear_iterations: list = field(default_factory=list)
    element_visits: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    eta: float = np.nan
    full_residuals_in_loop: int = 0
    solve_time: float = 0.0

    @property
    def mean_linear_iterations(self) -> float:
        return float(np.mean(self.linear_iterations)) if self.linear_iterations else 0.0


@dataclass
class OfflinePreconditioner:
    kind: str  # "stokes" or "ns"
    variant: str  # "offline" or "online"
    anchor: np.ndarray
    factor: DenseLU
    cost_seconds: float = 0.0

    def solve(self, b):
        return self.factor.solve(b)


class ReducedOrderModel:
    """Everything the online stage needs: bases, affine blocks, optional DEIM
    operator and cached offline preconditioners."""

    def __init__(self, problem: CavityProblem, basis: ReducedBasis, deim: DeimOperator | None = None,
                 affine: AffineReducedOperator | None = None, anchor_state=None):
        self.problem = problem
        self.basis = basis
        self.affine = affine if affine is not None else AffineReducedOperator(problem, basis)
        self.deim = deim
        self.anchor = problem.mean_parameter
        # converged full solution at the anchor, needed by the offline NS preconditioner
        self.anchor_state = anchor_state
        self.preconditioners: dict[str, OfflinePreconditioner] = {}
        self._conv = {}

    def convection(self, model: str):
        if model not in self._conv:
            if model == "reduced":
                self._conv[model] = FullConvection(self.problem, self.basis)
            elif model == "deim":
                if self.deim is None:
                    raise ValueError("no DEIM operator attached to this model")
                self._conv[model] = DeimConvection(self.problem, self.basis, self.deim)
            else:
                raise ValueError(f"unknown model {model!r}")
        return self._conv[model]

    def with_deim(self, deim: DeimOperator) -> "ReducedOrderModel":
        rom = ReducedOrderModel(self.problem, self.basis, deim, self.affine, self.anchor_state)
        rom.preconditioners = {k: v for k, v in self.preconditioners.items() if v.kind == "stokes"}
        return rom

    def preconditioner(self, name: str, xi, model: str):
        if name == "none":
            return None
        variant, kind = name.split("-")
        if variant == "online":
            return build_preconditioner(self, kind, "online", xi, model=model)
        key = f"{name}:{model}"
        if key not in self.preconditioners:
            self.preconditioners[key] = build_preconditioner(self, kind, "offline", self.anchor, model=model)
        return self.preconditioners[key]


def build_preconditioner(rom: ReducedOrderModel, kind: str, variant: str, xi_anchor,
                         model: str = "deim", full_state=None) -> OfflinePreconditioner:
    """Factor the reduced Stokes or Navier-Stokes matrix at ``xi_anchor``.

    The Navier-Stokes kind adds the reduced convection evaluated at the
    converged full solution for ``xi_anchor``; that full solve is part of
    the recorded construction cost.
    """
    if kind not in ("stokes", "ns"):
        raise ValueError(f"unknown preconditioner kind {kind!r}")
    t0 = time.perf_counter()
    xi = rom.problem.check_parameter(xi_anchor)
    M = rom.affine.stokes_matrix(xi)
    if kind == "ns":
        if full_state is None and variant == "offline" and rom.anchor_state is not None and np.allclose(xi, rom.anchor):
            full_state = rom.anchor_state
        if full_state is None:
            full_state = rom.problem.picard(xi)
        C, _, _ = rom.convection(model).at_velocity(full_state.u)
        ku = rom.basis.k_u
        M[:ku, :ku] += C
    factor = DenseLU(M)
    return OfflinePreconditioner(kind, variant, xi, factor, time.perf_counter() - t0)


def _linear_solve(J, rhs, config: OnlineConfig, M, ref_norm):
    if config.linear_solver == "direct":
        return DenseLU(J).solve(rhs), 0
    res = bicgstab(J, rhs, M, tol=config.krylov_tol, maxit=config.krylov_maxit, ref_norm=ref_norm)
    if not res.converged:
        raise KrylovError(f"bicgstab {res.flag} after {res.iterations} iterations")
    return res.x, res.iterations


def reduced_stokes_init(xi, rom: ReducedOrderModel, config: OnlineConfig | None = None, M=None):
    """Reduced Stokes solve; returns ``(u_hat, p_hat, linear_iterations)``."""
    config = config or OnlineConfig()
    xi = rom.problem.check_parameter(xi)
    aff = rom.affine
    Ms = aff.stokes_matrix(xi)
    rhs = aff.rhs(xi)
    if config.linear_solver == "bicgstab" and M is None:
        M = rom.preconditioner(config.preconditioner, xi, config.model)
    z, its = _linear_solve(Ms, rhs, config, M, np.linalg.norm(rhs))
    ku = aff.k_u
    return z[:ku], z[ku:], its


def _picard(xi, rom: ReducedOrderModel, config: OnlineConfig) -> OnlineReport:
    problem = rom.problem
    xi = problem.check_parameter(xi)
    conv = rom.convection(config.model)
    aff = rom.affine
    ku = aff.k_u
    evaluations_before = problem.residual_evaluations

    A_r = aff.velocity_matrix(xi)
    Ms = aff.stokes_matrix(xi, A_r)
    rhs = aff.rhs(xi)
    ref = np.linalg.norm(rhs)
    M = None
    if config.linear_solver == "bicgstab":
        M = rom.preconditioner(config.preconditioner, xi, config.model)

    t0 = time.perf_counter()
    z, its = _linear_solve(Ms, rhs, config, M, ref)
    report = OnlineReport(z[:ku], z[ku:], model=config.model, stokes_iterations=its)

    C, g, visits = conv.evaluate(z[:ku])
    report.element_visits.append(visits)
    G = Ms @ z - rhs
    G[:ku] += g
    report.residual_history.append(np.linalg.norm(G) / ref)
    for it in range(1, config.maxit + 1):
        J = Ms.copy()
        J[:ku, :ku] += C
        dz, its = _linear_solve(J, -G, config, M, ref)
        report.linear_iterations.append(its)
        z = z + dz
        C, g, visits = conv.evaluate(z[:ku])
        report.element_visits.append(visits)
        G = Ms @ z - rhs
        G[:ku] += g
        rel = np.linalg.norm(G) / ref
        report.residual_history.append(rel)
        report.nonlinear_iterations = it
        if rel < config.delta:
            report.converged = True
            break
        if not np.isfinite(rel) or rel > 1e4 * report.residual_history[0]:
            break
    report.solve_time = time.perf_counter() - t0
    report.u_hat, report.p_hat = z[:ku], z[ku:]
    report.full_residuals_in_loop = problem.residual_evaluations - evaluations_before
    report.u, report.p = lift(report.u_hat, report.p_hat, rom.basis, problem)
    if np.all(np.isfinite(report.u)):
        report.eta = problem.residual_indicator(report.u, report.p, xi)
    if not report.converged:
        raise ReducedConvergenceError(
            f"{config.model} Picard iteration did not converge "
            f"(last reduced residual {report.residual_history[-1]:.3e})",
            report,
        )
    return report


def solve_reduced(xi, rom: ReducedOrderModel, delta=1e-8, config: OnlineConfig | None = None) -> OnlineReport:
    """Galerkin reduced model with full-mesh assembly of the convection term."""
    config = config or OnlineConfig(model="reduced", delta=delta)
    if config.model != "reduced":
        config = OnlineConfig(**{**config.__dict__, "model": "reduced"})
    return _picard(xi, rom, config)


def solve_deim(xi, rom: ReducedOrderModel, config: OnlineConfig | None = None) -> OnlineReport:
    """DEIM model: convection rows assembled on the sample mesh only."""
    config = config or OnlineConfig(model="deim")
    if config.model != "deim":
        config = OnlineConfig(**{**config.__dict__, "model": "deim"})
    return _picard(xi, rom, config)
