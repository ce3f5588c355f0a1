"""Offline stage: reduced basis by random sampling with residual gating,
nonlinear snapshots, POD and the DEIM/gappy operators."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deim import DeimOperator, InterpolationSelection, build_deim_operator, deim_select, gappy_select
from .full_model import XI_HIGH, XI_LOW, CavityProblem, FullState, PicardConvergenceError
from .grid_fem import GridSpec
from .linalg_core import DenseLU, SingularMatrixError, svd
from .online import (
    OfflinePreconditioner,
    OnlineConfig,
    ReducedConvergenceError,
    ReducedOrderModel,
    build_preconditioner,
    solve_reduced,
)
from .rom import AffineReducedOperator, ReducedBasis

log = logging.getLogger(__name__)

STRATEGIES = ("full_ks", "full_ntrial", "mixed")

__all__ = [
    "STRATEGIES",
    "BasisTooLargeError",
    "SnapshotSet",
    "TrialRecord",
    "OfflineResult",
    "PODResult",
    "parameter_sampler",
    "enrichment_velocity",
    "error_indicator",
    "collect_snapshot",
    "build_reduced_basis",
    "pod_nonlinear",
    "build_preconditioner",
    "make_deim",
    "save_bundle",
    "load_bundle",
]


class BasisTooLargeError(RuntimeError):
    pass


@dataclass
class SnapshotSet:
    strategy: str
    columns: list = field(default_factory=list)

    @property
    def S(self) -> np.ndarray:
        return np.column_stack(self.columns)

    def __len__(self):
        return len(self.columns)


@dataclass
class TrialRecord:
    xi: np.ndarray
    eta: float
    accepted: bool
    k_at_visit: int


@dataclass
class OfflineResult:
    problem: CavityProblem
    basis: ReducedBasis
    affine: AffineReducedOperator
    snapshots: dict
    trials: list
    anchor_state: FullState
    seed: int
    tau: float
    delta: float
    full_solutions: list = field(default_factory=list)  # (xi, FullState) per basis snapshot

    @property
    def k_s(self) -> int:
        return self.basis.n_snapshots

    @property
    def k(self) -> int:
        return self.basis.k

    def rom(self, deim: DeimOperator | None = None) -> ReducedOrderModel:
        return ReducedOrderModel(self.problem, self.basis, deim, self.affine, self.anchor_state)


@dataclass
class PODResult:
    V: np.ndarray
    sigma: np.ndarray
    rank: int

    def tail_identity_error(self, S) -> float:
        """| ||(I - V V^T) S||_F^2 - sum of discarded sigma^2 |, relative to ||S||_F^2."""
        S = np.asarray(S, dtype=float)
        resid = S - self.V @ (self.V.T @ S)
        lhs = np.sum(resid**2)
        rhs = np.sum(self.sigma[self.V.shape[1]:] ** 2)
        return abs(lhs - rhs) / max(np.sum(S**2), np.finfo(float).tiny)


def parameter_sampler(m: int, seed: int):
    """Counter-based (Philox) generator of i.i.d. uniform draws on [0.01, 1]^m."""
    rng = np.random.Generator(np.random.Philox(seed))
    while True:
        yield rng.uniform(XI_LOW, XI_HIGH, size=m)


def enrichment_velocity(problem: CavityProblem, p) -> np.ndarray:
    return problem.enrichment_velocity(p)


def error_indicator(problem: CavityProblem, u, p, xi) -> float:
    return problem.residual_indicator(u, p, xi)


def collect_snapshot(snapshots: SnapshotSet, problem: CavityProblem, *, accepted: bool,
                     full_u=None, reduced_u=None) -> bool:
    """Append ``N(u) u`` (interior rows) if the strategy records this trial.

    ``full_ks`` keeps full solutions that enter the basis, ``full_ntrial``
    keeps a full solution at every trial and ``mixed`` falls back to the
    lifted reduced solution when no full solve was needed.
    """
    s = snapshots.strategy
    if s == "full_ks":
        u = full_u if accepted else None
    elif s == "full_ntrial":
        u = full_u
    else:
        u = full_u if accepted else reduced_u
    if u is None:
        return False
    snapshots.columns.append(problem.nonlinear_term(u))
    return True


def build_reduced_basis(problem: CavityProblem, n_trial: int = 2000, tau: float = 1e-4,
                        delta: float = 1e-8, strategies=("full_ks",), seed: int = 0,
                        enrich: bool = True, progress=None) -> OfflineResult:
    """Random-sampling construction of ``Q_u`` and ``Q_p``.

    Starting from the full solution at the mean parameter, each of the
    ``n_trial`` random parameters is solved with the current reduced model;
    if the residual indicator exceeds ``tau`` the full model is solved and
    its velocity, pressure and supremizer are added to the basis.
    Nonlinear snapshots are recorded for every requested strategy.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    strategies = tuple(strategies)
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown snapshot strategy {s!r}")
    snaps = {s: SnapshotSet(s) for s in strategies}

    xi0 = problem.mean_parameter
    state0 = problem.picard(xi0, delta)
    u_in0 = state0.u[problem.interior] - problem.u_bc[problem.interior]
    r0 = problem.enrichment_velocity(state0.p) if enrich else None
    basis = ReducedBasis.empty(problem.n_u, problem.n_p, enrich).augmented(u_in0, state0.p, r0)
    for s in snaps.values():
        collect_snapshot(s, problem, accepted=True, full_u=state0.u)
    full_solutions = [(xi0, state0)]

    affine = AffineReducedOperator(problem, basis)
    config = OnlineConfig(model="reduced", delta=delta)
    trials = []
    sampler = parameter_sampler(problem.m, seed)
    t0 = time.perf_counter()
    for i in range(n_trial):
        xi = next(sampler)
        rom = ReducedOrderModel(problem, basis, affine=affine)
        try:
            rep = solve_reduced(xi, rom, config=config)
            eta, u_red = rep.eta, rep.u
        except (ReducedConvergenceError, SingularMatrixError, np.linalg.LinAlgError) as exc:
            rep = getattr(exc, "report", None)
            eta, u_red = np.inf, (rep.u if rep is not None else None)
        accepted = bool(eta > tau)
        trials.append(TrialRecord(xi, float(eta), accepted, basis.k))
        state = None
        if accepted or "full_ntrial" in snaps:
            try:
                state = problem.picard(xi, delta)
            except PicardConvergenceError as exc:
                log.warning("full solve failed at trial %d: %s", i, exc)
                if accepted:
                    raise
        if accepted:
            u_in = state.u[problem.interior] - problem.u_bc[problem.interior]
            r = problem.enrichment_velocity(state.p) if enrich else None
            basis = basis.augmented(u_in, state.p, r)
            full_solutions.append((xi, state))
            if 2 * basis.n_snapshots > problem.n_u or basis.n_snapshots > problem.n_p:
                raise BasisTooLargeError(
                    f"k_s={basis.n_snapshots} exceeds the full pressure/velocity dimension; "
                    "the spatial discretization is not fine enough for reduced-order modeling"
                )
            affine = AffineReducedOperator(problem, basis)
        for s in snaps.values():
            collect_snapshot(s, problem, accepted=accepted,
                             full_u=None if state is None else state.u, reduced_u=u_red)
        if progress is not None:
            progress(i, basis, eta)
    log.info(
        "offline: %d trials, k_s=%d, k=%d in %.1fs",
        n_trial, basis.n_snapshots, basis.k, time.perf_counter() - t0,
    )
    return OfflineResult(problem, basis, affine, snaps, trials, state0, seed, tau, delta, full_solutions)


def pod_nonlinear(S, n_deim: int | None = None, rank_tol: float = 1e-12) -> PODResult:
    """Left singular vectors of the nonlinear snapshot matrix.

    ``n_deim`` defaults to the numerical rank (``sigma_i > rank_tol * sigma_1``).
    """
    U, s, _ = svd(S)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if n_deim is None:
        n_deim = rank
    if not 1 <= n_deim <= rank:
        raise ValueError(f"n_deim={n_deim} must lie in [1, rank(S)={rank}]")
    return PODResult(U[:, :n_deim], s, rank)


def make_deim(result: OfflineResult, strategy: str = "full_ks", n_deim: int | None = None,
              method: str = "deim", n_g: int | None = None, pod: PODResult | None = None) -> DeimOperator:
    """POD of the recorded snapshots followed by index selection."""
    if pod is None or (n_deim is not None and pod.V.shape[1] != n_deim):
        pod = pod_nonlinear(result.snapshots[strategy].S, n_deim)
    V = pod.V
    if method == "deim":
        sel = deim_select(V)
    elif method == "gappy":
        sel = gappy_select(V, n_g if n_g is not None else 2 * V.shape[1])
    else:
        raise ValueError(f"unknown selection method {method!r}")
    return build_deim_operator(result.basis.Q_u, V, sel, result.problem.mesh)


# --------------------------------------------------------------------------
# bundle persistence
# --------------------------------------------------------------------------


def save_bundle(path, result: OfflineResult, deim: DeimOperator, strategy: str,
                n_trial: int, preconditioners: dict | None = None,
                pods: dict | None = None) -> Path:
    """Write arrays to ``arrays.npz`` and metadata to ``manifest.json``.

    ``pods`` maps snapshot strategies to their POD so that truncation sweeps
    can be replayed from the bundle.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {
        "Q_u": result.basis.Q_u,
        "Q_p": result.basis.Q_p,
        "V": deim.V,
        "indices": deim.indices,
        "LT": deim.LT,
        "anchor_u": result.anchor_state.u,
        "anchor_p": result.anchor_state.p,
        "stokes_blocks": np.stack(result.affine.A_r) if result.affine.A_r else np.zeros(0),
        "B_r": result.affine.B_r,
    }
    for name, pod in (pods or {}).items():
        arrays[f"V_{name}"] = pod.V
        arrays[f"sigma_{name}"] = pod.sigma
    pre_meta = {}
    for name, pc in (preconditioners or {}).items():
        arrays[f"pc_{name}_lu"] = pc.factor.lu
        arrays[f"pc_{name}_piv"] = pc.factor.piv
        pre_meta[name] = {"kind": pc.kind, "variant": pc.variant,
                          "anchor": [float(x) for x in pc.anchor]}
    np.savez(path / "arrays.npz", **arrays)
    manifest = {
        "n": result.problem.spec.n,
        "n_d": result.problem.spec.n_d,
        "m": result.problem.m,
        "tau": result.tau,
        "delta": result.delta,
        "n_trial": n_trial,
        "seed": result.seed,
        "k_s": result.k_s,
        "k": result.k,
        "n_deim": int(deim.V.shape[1]),
        "n_indices": int(len(deim.indices)),
        "selection": deim.selection.method,
        "strategy": strategy,
        "indices": [int(i) for i in deim.indices],
        "accepted_trials": [int(i) for i, t in enumerate(result.trials) if t.accepted],
        "preconditioners": pre_meta,
        "pod_strategies": sorted(pods or {}),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(path, problem: CavityProblem | None = None) -> tuple[ReducedOrderModel, dict]:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no offline bundle at {path}")
    manifest = json.loads((path / "manifest.json").read_text())
    data = np.load(path / "arrays.npz")
    if problem is None:
        problem = CavityProblem(GridSpec(manifest["n"], manifest["n_d"]))
    elif (problem.spec.n, problem.spec.n_d) != (manifest["n"], manifest["n_d"]):
        raise ValueError("bundle was built for a different grid")
    basis = ReducedBasis(data["Q_u"], data["Q_p"], manifest["k_s"])
    sel = InterpolationSelection(data["indices"], manifest["selection"])
    deim = build_deim_operator(basis.Q_u, data["V"], sel, problem.mesh)
    anchor = FullState(u=data["anchor_u"], p=data["anchor_p"], converged=True)
    rom = ReducedOrderModel(problem, basis, deim, anchor_state=anchor)
    for name, meta in manifest["preconditioners"].items():
        factor = DenseLU.from_factors(data[f"pc_{name}_lu"], data[f"pc_{name}_piv"])
        rom.preconditioners[name] = OfflinePreconditioner(
            meta["kind"], meta["variant"], np.asarray(meta["anchor"]), factor
        )
    manifest["pods"] = {
        name: PODResult(data[f"V_{name}"], data[f"sigma_{name}"], data[f"V_{name}"].shape[1])
        for name in manifest.get("pod_strategies", [])
    }
    return rom, manifest
