"""Experiment driver: offline bundles, online sweeps and figure data."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deim import build_deim_operator, deim_select, gappy_select
from .full_model import CavityProblem, PicardConvergenceError
from .grid_fem import GridSpec
from .offline import (
    STRATEGIES,
    build_reduced_basis,
    load_bundle,
    make_deim,
    parameter_sampler,
    pod_nonlinear,
    save_bundle,
)
from .online import (
    PRECONDITIONERS,
    KrylovError,
    OnlineConfig,
    ReducedConvergenceError,
    build_preconditioner,
    solve_deim,
    solve_reduced,
)

log = logging.getLogger(__name__)

SWEEPS = ("strategy-comparison", "ndeim-sweep", "gappy-vs-deim")
MODELS = ("full", "full-loose", "reduced", "deim")
SOLVERS = ("direct",) + PRECONDITIONERS[1:]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    n: int = 32
    n_d: int = 2
    tau: float = 1e-4
    delta: float = 1e-8
    loose_delta: float = 1e-4
    n_trial: int = 2000
    n_s: int = 10
    seed: int = 0
    online_seed: int = 1
    strategy: str = "full_ks"
    strategies: tuple = ("full_ks",)
    models: tuple = ("full", "full-loose", "reduced", "deim")
    solvers: tuple = ("direct", "offline-stokes", "online-stokes", "offline-ns", "online-ns")
    n_deim: int | None = None
    selection: str = "deim"
    n_g_multiplier: int = 2
    ndeim_values: tuple = ()
    krylov_tol: float = 1e-9

    def validate(self):
        GridSpec(self.n, self.n_d)
        if self.tau <= 0 or self.delta <= 0:
            raise ConfigError("tau and delta must be positive")
        if self.n_trial < 0 or self.n_s < 1:
            raise ConfigError("n_trial must be >= 0 and n_s >= 1")
        for s in (self.strategy, *self.strategies):
            if s not in STRATEGIES:
                raise ConfigError(f"field 'strategy': unknown strategy {s!r}")
        if self.strategy not in self.strategies:
            self.strategies = tuple(self.strategies) + (self.strategy,)
        for mname in self.models:
            if mname not in MODELS:
                raise ConfigError(f"field 'models': unknown model {mname!r}")
        for sname in self.solvers:
            if sname not in SOLVERS:
                raise ConfigError(f"field 'solvers': unknown solver {sname!r}")
        if self.selection not in ("deim", "gappy"):
            raise ConfigError(f"field 'selection': unknown method {self.selection!r}")
        return self

    @property
    def m(self) -> int:
        return self.n_d**2

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_TUPLE_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "tuple"}


def _coerce(name, raw, where=""):
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    if name not in fields:
        raise ConfigError(f"{where}unknown field {name!r}")
    raw = str(raw).strip()
    try:
        if name in _TUPLE_FIELDS:
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if name == "ndeim_values":
                return tuple(int(x) for x in items)
            return tuple(items)
        if name == "n_deim":
            return None if raw.lower() in ("", "none") else int(raw)
        kind = fields[name].type
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}field {name!r}: cannot parse {raw!r}") from exc


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read a ``key = value`` file, then apply ``overrides`` (which win)."""
    values = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = _coerce(key, val, f"{path}:{lineno}: ")
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = _coerce(key, val, "command line: ")
    return ExperimentConfig(**values).validate()


def online_parameters(config: ExperimentConfig):
    gen = parameter_sampler(config.m, config.online_seed)
    return [next(gen) for _ in range(config.n_s)]


# --------------------------------------------------------------------------
# offline
# --------------------------------------------------------------------------


def run_offline(config: ExperimentConfig, out_dir, problem: CavityProblem | None = None):
    """Build the reduced basis, DEIM operator and offline preconditioners."""
    problem = problem or CavityProblem(GridSpec(config.n, config.n_d))
    result = build_reduced_basis(
        problem, config.n_trial, config.tau, config.delta,
        strategies=config.strategies, seed=config.seed,
    )
    pods = {s: pod_nonlinear(result.snapshots[s].S) for s in config.strategies}
    n_g = None if config.n_deim is None else config.n_g_multiplier * config.n_deim
    pod = pods[config.strategy]
    if config.n_deim is not None:
        pod = pod_nonlinear(result.snapshots[config.strategy].S, config.n_deim)
    if config.selection == "gappy" and n_g is None:
        n_g = config.n_g_multiplier * pod.V.shape[1]
    deim = make_deim(result, config.strategy, config.n_deim, config.selection, n_g, pod=pod)
    rom = result.rom(deim)
    pcs = {}
    for kind in ("stokes", "ns"):
        pc = build_preconditioner(rom, kind, "offline", problem.mean_parameter, model="deim")
        pcs[f"offline-{kind}:deim"] = pc
        log.info("offline %s preconditioner built in %.3fs", kind, pc.cost_seconds)
    path = save_bundle(out_dir, result, deim, config.strategy, config.n_trial, pcs, pods)
    cfg = config.to_dict()
    (Path(out_dir) / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path, result


# --------------------------------------------------------------------------
# online
# --------------------------------------------------------------------------


def _safe(fn):
    """Run an online solve, keeping the report of a non-converged run."""
    try:
        return fn(), True
    except ReducedConvergenceError as exc:
        return exc.report, False


def run_online(config: ExperimentConfig, bundle_dir) -> list[dict]:
    """One row per (parameter sample, model, solver) plus per-cell averages."""
    rom, manifest = load_bundle(bundle_dir)
    if (manifest["n"], manifest["n_d"]) != (config.n, config.n_d):
        raise ConfigError("bundle grid does not match the configuration")
    problem = rom.problem
    chash = config.hash()
    rows = []
    xis = online_parameters(config)
    for i, xi in enumerate(xis):
        base = {"xi_id": i, "xi": " ".join(f"{x:.6f}" for x in xi), "seed": config.online_seed,
                "config_hash": chash}
        for model in config.models:
            if model in ("full", "full-loose"):
                delta = config.delta if model == "full" else config.loose_delta
                t0 = time.perf_counter()
                try:
                    st = problem.picard(xi, delta)
                    conv = True
                except PicardConvergenceError as exc:
                    st, conv = exc.state, False
                rows.append({**base, "model": model, "solver": "direct", "preconditioner": "",
                             "eta": st.relative_residual, "nonlinear_iters": st.iterations,
                             "mean_linear_iters": "", "stokes_iters": "", "element_visits": problem.mesh.n_el,
                             "converged": conv, "wall_time": time.perf_counter() - t0})
                continue
            solvers = ("direct",) if model == "reduced" else config.solvers
            for solver in solvers:
                cfg = OnlineConfig(
                    model=model,
                    linear_solver="direct" if solver == "direct" else "bicgstab",
                    preconditioner="none" if solver == "direct" else solver,
                    delta=config.delta, krylov_tol=config.krylov_tol,
                )
                t0 = time.perf_counter()
                fn = solve_reduced if model == "reduced" else solve_deim
                try:
                    rep, conv = _safe(lambda: fn(xi, rom, config=cfg))
                except KrylovError as exc:
                    log.warning("xi %d %s/%s: %s", i, model, solver, exc)
                    continue
                rows.append({**base, "model": model, "solver": cfg.linear_solver,
                             "preconditioner": cfg.preconditioner, "eta": rep.eta,
                             "nonlinear_iters": rep.nonlinear_iterations,
                             "mean_linear_iters": rep.mean_linear_iterations if solver != "direct" else "",
                             "stokes_iters": rep.stokes_iterations if solver != "direct" else "",
                             "element_visits": float(np.mean(rep.element_visits)),
                             "converged": conv, "wall_time": time.perf_counter() - t0})
    rows.extend(summarize(rows))
    return rows


def summarize(rows) -> list[dict]:
    """Average rows over the parameter samples of each (model, solver, preconditioner) cell."""
    cells = {}
    for r in rows:
        cells.setdefault((r["model"], r["solver"], r["preconditioner"]), []).append(r)
    out = []
    for (model, solver, pc), rs in cells.items():
        lin = [r["mean_linear_iters"] for r in rs if r["mean_linear_iters"] != ""]
        out.append({
            "xi_id": "mean", "xi": "", "seed": rs[0]["seed"], "config_hash": rs[0]["config_hash"],
            "model": model, "solver": solver, "preconditioner": pc,
            "eta": float(np.mean([r["eta"] for r in rs])),
            "nonlinear_iters": float(np.mean([r["nonlinear_iters"] for r in rs])),
            "mean_linear_iters": float(np.mean(lin)) if lin else "",
            "stokes_iters": "",
            "element_visits": float(np.mean([r["element_visits"] for r in rs])),
            "converged": all(r["converged"] for r in rs),
            "wall_time": float(np.mean([r["wall_time"] for r in rs])),
        })
    return out


# --------------------------------------------------------------------------
# figure data
# --------------------------------------------------------------------------


def _mean_eta(rom, xis, model):
    etas = []
    for xi in xis:
        fn = solve_reduced if model == "reduced" else solve_deim
        try:
            rep, _ = _safe(lambda: fn(xi, rom))
            etas.append(rep.eta)
        except (np.linalg.LinAlgError, KrylovError):
            etas.append(np.inf)
    return float(np.mean(etas))


def figure_data(config: ExperimentConfig, bundle_dir, sweep: str) -> list[dict]:
    """Mean residual indicator versus ``n_deim`` for one of :data:`SWEEPS`."""
    if sweep not in SWEEPS:
        raise ConfigError(f"unknown sweep {sweep!r}")
    rom, manifest = load_bundle(bundle_dir)
    problem, basis = rom.problem, rom.basis
    xis = online_parameters(config)
    baseline = _mean_eta(rom, xis, "reduced")
    pods = manifest["pods"]
    if not pods:
        raise ConfigError("bundle has no stored POD bases; rerun offline")

    if sweep == "strategy-comparison":
        curves = {s: pods[s] for s in pods}
    else:
        curves = {manifest["strategy"]: pods[manifest["strategy"]]}
    values = config.ndeim_values or tuple(
        sorted({max(1, int(round(f * manifest["k_s"]))) for f in (0.05, 0.1, 0.25, 0.5, 0.75, 1.0)})
    )
    rows = []
    for strategy, pod in curves.items():
        for nd in values:
            if nd > pod.V.shape[1]:
                continue
            V = pod.V[:, :nd]
            methods = ["deim"] + (["gappy"] if sweep == "gappy-vs-deim" else [])
            for method in methods:
                if method == "deim":
                    sel = deim_select(V)
                else:
                    sel = gappy_select(V, min(config.n_g_multiplier * nd, V.shape[0]))
                op = build_deim_operator(basis.Q_u, V, sel, problem.mesh)
                eta = _mean_eta(rom.with_deim(op), xis, "deim")
                rows.append({"sweep": sweep, "strategy": strategy, "method": method,
                             "n_deim": nd, "n_indices": len(sel), "mean_eta": eta,
                             "reduced_eta": baseline, "n_s": len(xis)})
    return rows


def write_csv(rows, path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6e}" if isinstance(v, float) else v) for k, v in r.items()})
