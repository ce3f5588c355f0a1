import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsrom.deim import (
    build_deim_operator,
    deim_select,
    gappy_schedule,
    gappy_select,
)
from nsrom.linalg_core import RankDeficientError

from oracles import brute_deim, brute_gappy, random_orthonormal


def test_deim_unit_vector():
    V = np.zeros((6, 1))
    V[3, 0] = 1.0
    assert deim_select(V).indices.tolist() == [3]


def test_deim_small_example_against_oracle():
    v1 = np.array([0.1, 0.9, 0.2, 0.1, 0.1])
    v1 /= np.linalg.norm(v1)
    w = np.array([1.0, 0.0, -0.5, 0.3, 0.7])
    v2 = w - (w @ v1) * v1
    V = np.column_stack([v1, v2 / np.linalg.norm(v2)])
    sel = deim_select(V)
    assert sel.indices.tolist() == brute_deim(V)
    assert sel.indices[0] == 1


def test_deim_ties_go_to_lowest_index():
    V = np.array([[0.5], [-0.5], [0.5], [0.5]])
    assert deim_select(V).indices.tolist() == [0]


def test_deim_rank_deficient():
    v = np.array([1.0, 2.0, 3.0]) / np.sqrt(14)
    with pytest.raises(RankDeficientError):
        deim_select(np.column_stack([v, v]))


def test_gappy_unit_vector():
    V = np.zeros((5, 1))
    V[2, 0] = 1.0
    assert gappy_select(V, 1).indices.tolist() == [2]


def test_gappy_small_example_against_oracle():
    V = random_orthonormal(np.random.default_rng(8), 6, 2)
    assert gappy_select(V, 4).indices.tolist() == brute_gappy(V, 4)


@pytest.mark.parametrize("n_v, n_g", [(4, 4), (3, 7), (5, 2), (7, 3), (1, 6), (6, 11)])
def test_gappy_schedule_totals(n_v, n_g):
    sched = gappy_schedule(n_v, n_g)
    assert len(sched) == min(n_v, n_g)
    assert sum(c for c, _ in sched) == n_v
    assert sum(a for _, a in sched) == n_g


def test_gappy_equal_sizes_is_one_index_per_vector():
    V = random_orthonormal(np.random.default_rng(2), 20, 5)
    sel = gappy_select(V, 5)
    assert len(set(sel.indices.tolist())) == 5
    assert gappy_schedule(5, 5) == [(1, 1)] * 5


def test_gappy_rejects_too_many():
    with pytest.raises(ValueError):
        gappy_select(np.eye(3)[:, :1], 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10**6))
def test_selection_matches_oracles(N, n_v, mult, seed):
    n_v = min(n_v, N)
    V = random_orthonormal(np.random.default_rng(seed), N, n_v)
    assert deim_select(V).indices.tolist() == brute_deim(V)
    n_g = min(mult * n_v, N)
    sel = gappy_select(V, n_g)
    assert sel.indices.tolist() == brute_gappy(V, n_g)
    assert len(set(sel.indices.tolist())) == n_g


@pytest.fixture(scope="module")
def operator():
    rng = np.random.default_rng(4)
    V = random_orthonormal(rng, 60, 8)
    Q = random_orthonormal(rng, 60, 5)
    return build_deim_operator(Q, V, deim_select(V))


def test_interpolation_exact_at_indices(operator):
    F = np.random.default_rng(0).standard_normal((60, 100))
    Fbar = operator.approximate(F)
    assert np.abs(Fbar[operator.indices] - F[operator.indices]).max() <= 1e-10


def test_error_bound_holds(operator):
    rng = np.random.default_rng(1)
    for _ in range(20):
        F = rng.standard_normal(60)
        err = np.linalg.norm(F - operator.approximate(F))
        assert err <= operator.error_bound(F) * (1 + 1e-12)


def test_span_reproduced(operator):
    F = operator.V @ np.random.default_rng(2).standard_normal(8)
    assert np.allclose(operator.approximate(F), F, atol=1e-10)


def test_square_basis_is_exact():
    V = random_orthonormal(np.random.default_rng(5), 7, 7)
    op = build_deim_operator(np.eye(7), V, deim_select(V))
    F = np.random.default_rng(6).standard_normal(7)
    assert np.allclose(op.approximate(F), F, atol=1e-12)


def test_lt_shape_and_gappy_operator():
    rng = np.random.default_rng(7)
    V = random_orthonormal(rng, 40, 4)
    Q = random_orthonormal(rng, 40, 6)
    op = build_deim_operator(Q, V, gappy_select(V, 8))
    assert op.LT.shape == (6, 8)
    F = V @ rng.standard_normal(4)
    assert np.allclose(op.approximate(F), F, atol=1e-10)


def test_duplicate_indices_rejected():
    V = random_orthonormal(np.random.default_rng(9), 10, 2)
    from nsrom.deim import InterpolationSelection

    with pytest.raises(ValueError):
        build_deim_operator(V, V, InterpolationSelection(np.array([1, 1]), "deim"))


def test_operator_builds_sample_mesh(mesh8):
    n_in = len(mesh8.interior_dofs)
    V = random_orthonormal(np.random.default_rng(3), n_in, 4)
    op = build_deim_operator(V, V, deim_select(V), mesh8)
    assert np.array_equal(op.rows, mesh8.interior_dofs[op.indices])
    assert 0 < op.sample.n_elements <= 16
