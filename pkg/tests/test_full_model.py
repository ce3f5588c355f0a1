import json

import numpy as np
import pytest

from nsrom.full_model import (
    CavityProblem,
    PicardConvergenceError,
    load_snapshot,
    picard_full,
    residual_full,
    save_snapshot,
    solve_stokes_full,
)
from nsrom.grid_fem import GridSpec, assemble_convection


def _mirror_x(mesh):
    """Node permutation reflecting x -> -x."""
    n = mesh.n
    j, i = np.divmod(np.arange(mesh.n_nodes), n + 1)
    return j * (n + 1) + (n - i)


@pytest.fixture(scope="module")
def mean_state(problem16):
    return picard_full(problem16, problem16.mean_parameter, 1e-8)


def test_stokes_mean_pressure_and_divergence(problem16, rng):
    for _ in range(3):
        xi = rng.uniform(0.01, 1.0, 4)
        u_in, p = solve_stokes_full(problem16, xi)
        u = problem16.lift_velocity(u_in)
        assert abs(problem16.pbar @ p) <= 1e-10
        assert np.linalg.norm(problem16.B @ u) <= 1e-10


def test_stokes_symmetric_for_uniform_viscosity(problem16):
    mesh = problem16.mesh
    u = problem16.lift_velocity(solve_stokes_full(problem16, np.ones(4))[0])
    mirror = _mirror_x(mesh)
    ux, uy = u[: mesh.n_nodes], u[mesh.n_nodes :]
    assert np.abs(ux - ux[mirror]).max() < 1e-12
    assert np.abs(uy + uy[mirror]).max() < 1e-12


def test_stokes_residual_is_convection_only(problem16):
    xi = problem16.mean_parameter
    u_in, p = problem16.solve_stokes(xi)
    u = problem16.lift_velocity(u_in)
    G, _ = residual_full(problem16, u, p, xi)
    Nu = (assemble_convection(problem16.mesh, u) @ u)[problem16.interior]
    assert np.allclose(G[: problem16.n_u], Nu, atol=1e-11)
    assert np.abs(G[problem16.n_u :]).max() < 1e-11


def test_residual_of_boundary_data_alone(problem16):
    _, rel = problem16.residual(problem16.u_bc, np.zeros(problem16.n_p), problem16.mean_parameter)
    assert rel == pytest.approx(1.0, abs=1e-2)


def test_picard_converges_at_mean(problem16, mean_state):
    st = mean_state
    assert st.converged and st.relative_residual < 1e-8
    assert st.iterations <= 50
    assert st.residual_history[-1] < st.residual_history[0]
    assert max(abs(m) for m in st.mean_pressure_history) <= 1e-10
    # the first correction moves away from the Stokes solution
    assert st.residual_history[0] > 1e-6
    _, rel = residual_full(problem16, st.u, st.p, problem16.mean_parameter)
    assert rel < 1e-8
    assert np.array_equal(st.u[problem16.mesh.boundary_dofs], problem16.u_bc[problem16.mesh.boundary_dofs])


def test_loose_tolerance_needs_fewer_steps(problem16, mean_state):
    loose = problem16.picard(problem16.mean_parameter, 1e-4)
    assert loose.iterations < mean_state.iterations
    assert 1e-9 < loose.relative_residual < 1e-4


@pytest.mark.parametrize("seed", range(4))
def test_picard_random_parameters(problem16, seed):
    xi = np.random.default_rng(seed).uniform(0.01, 1.0, 4)
    st = problem16.picard(xi)
    assert st.relative_residual < 1e-8 and st.iterations <= 50


def test_picard_reports_history_on_failure(problem16):
    with pytest.raises(PicardConvergenceError) as info:
        problem16.picard(np.full(4, 0.01), 1e-12, maxit=1)
    assert info.value.state is not None
    assert len(info.value.state.residual_history) == 2


@pytest.mark.parametrize("xi", [[0.5, 0.5, 0.5], [0.5, -0.1, 0.5, 0.5]])
def test_bad_parameters(problem16, xi):
    with pytest.raises(ValueError):
        problem16.picard(xi)


def test_bad_delta(problem16):
    with pytest.raises(ValueError):
        problem16.picard(problem16.mean_parameter, 0.0)


def test_snapshot_roundtrip(tmp_path, problem16, mean_state):
    path = tmp_path / "snap"
    save_snapshot(path, mean_state, problem16.mean_parameter, problem16, seed=0)
    state, info = load_snapshot(path)
    assert np.array_equal(state.u, mean_state.u) and np.array_equal(state.p, mean_state.p)
    meta = json.loads((tmp_path / "snap.json").read_text())
    assert meta == info
    assert meta["n"] == 16 and meta["seed"] == 0 and meta["iterations"] == mean_state.iterations
    assert meta["xi"] == pytest.approx([0.505] * 4)


def test_problem_pickles(problem8):
    import pickle

    problem8.enrichment_velocity(np.ones(problem8.n_p))
    clone = pickle.loads(pickle.dumps(problem8))
    assert isinstance(clone, CavityProblem)
    assert np.allclose(clone.enrichment_velocity(np.ones(problem8.n_p)),
                       problem8.enrichment_velocity(np.ones(problem8.n_p)))


def test_nine_parameters_run():
    problem = CavityProblem(GridSpec(12, 3))
    st = problem.picard(np.linspace(0.1, 0.9, 9))
    assert st.converged
