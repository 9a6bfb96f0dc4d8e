import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import state_major, toy_basis_reference
from psm.flow import (AffineBasis, build_flow_operator, build_sm_flow_operator, dumps_basis,
                      extract_affine_basis, feasible_region_vertices, loads_basis,
                      membership_residual, mutual_residual, state_measure_basis, visitation_basis)
from psm.mdp import random_mdp, random_policy, toy_mdp
from psm.oracle import successor_measure, visitation


def test_toy_operator_matches_closed_form():
    g = 0.7
    op = build_flow_operator(toy_mdp(g, [1.0, 0.0]))
    # rows: states; columns action-major (s0a0, s1a0, s0a1, s1a1)
    expected = np.array([[1, -g, 1 - g, 0], [-g, 1, 0, 1 - g]], dtype=float)
    np.testing.assert_allclose(op.matrix[:, [0, 2, 1, 3]], expected, atol=1e-15)
    np.testing.assert_allclose(op.rhs, [1 - g, 0])


def test_zero_discount_is_action_sum_selector():
    op = build_flow_operator(toy_mdp(0.0, [0.3, 0.7]))
    np.testing.assert_array_equal(op.matrix, [[1, 1, 0, 0], [0, 0, 1, 1]])
    np.testing.assert_allclose(op.rhs, [0.3, 0.7])


@given(st.integers(2, 7), st.integers(1, 4), st.floats(0.0, 0.99), st.integers(0, 2**31))
def test_column_sums_equal_one_minus_gamma(n_s, n_a, gamma, seed):
    mdp = random_mdp(n_s, n_a, gamma, np.random.default_rng(seed))
    op = build_flow_operator(mdp)
    np.testing.assert_allclose(op.matrix.sum(axis=0), 1 - gamma, atol=1e-10)


def test_sm_operator_shared_across_sources(rng):
    mdp = random_mdp(3, 2, 0.9, rng)
    ops = [build_sm_flow_operator(mdp, (s, a)) for s in range(3) for a in range(2)]
    for op in ops[1:]:
        np.testing.assert_array_equal(op.matrix, ops[0].matrix)
    np.testing.assert_allclose(build_sm_flow_operator(toy_mdp(0.5), (0, 0)).rhs, [0.5, 0])


def test_sm_rhs_matches_row_by_row_assembly():
    # 3-state chain: a0 moves right (last state absorbs), a1 stays
    p = np.zeros((3, 2, 3))
    for s in range(3):
        p[s, 0, min(s + 1, 2)] = 1.0
        p[s, 1, s] = 1.0
    from psm.mdp import TabularMdp
    mdp, g = TabularMdp(p, 0.8), 0.8
    op = build_sm_flow_operator(mdp, (1, 0))
    # sum over a+ of M(s,a,s+,a+) - g sum_{s',a'} P(s+|s',a') M(s,a,s',a') = (1-g) 1[s+=1]
    rhs = np.zeros(3)
    for sp in range(3):
        rhs[sp] = (1 - g) * (sp == 1)
    np.testing.assert_allclose(op.rhs, rhs)


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
@pytest.mark.parametrize("mu0", [1.0, 0.5, 0.2])
def test_toy_basis_matches_closed_form(gamma, mu0):
    basis = visitation_basis(toy_mdp(gamma, [mu0, 1 - mu0]))
    phi, b = toy_basis_reference(gamma, mu0)
    assert basis.dim == 2
    assert mutual_residual(basis, AffineBasis(phi, b)) < 1e-8


@given(st.integers(2, 8), st.integers(1, 4), st.floats(0.0, 0.99), st.integers(0, 2**31))
def test_extraction_solves_the_flow_system(n_s, n_a, gamma, seed):
    mdp = random_mdp(n_s, n_a, gamma, np.random.default_rng(seed))
    op = build_flow_operator(mdp)
    basis = extract_affine_basis(op)
    assert basis.dim == n_s * (n_a - 1)
    if basis.dim:
        assert np.linalg.norm(op.matrix @ basis.basis) < 1e-10
        assert np.linalg.svd(basis.basis, compute_uv=False).min() > 1e-10
    assert op.residual(basis.bias) < 1e-10
    w = np.random.default_rng(seed).standard_normal(basis.dim)
    assert op.residual(basis.reconstruct(w)) < 1e-9


def _rank_by_elimination(a, tol=1e-9):
    m = a.astype(float).copy()
    rank, rows, cols = 0, *m.shape
    for c in range(cols):
        piv = rank + int(np.argmax(np.abs(m[rank:, c]))) if rank < rows else None
        if piv is None or abs(m[piv, c]) < tol:
            continue
        m[[rank, piv]] = m[[piv, rank]]
        m[rank + 1:] -= np.outer(m[rank + 1:, c] / m[rank, c], m[rank])
        rank += 1
        if rank == rows:
            break
    return rank


def test_null_dimension_against_elimination(rng):
    mdp = random_mdp(10, 4, 0.9, rng)
    op = build_flow_operator(mdp)
    assert extract_affine_basis(op).dim == 40 - _rank_by_elimination(op.matrix) == 30


def test_membership_examples(rng):
    mdp = random_mdp(5, 3, 0.9, rng)
    basis = visitation_basis(mdp)
    assert membership_residual(basis, basis.bias) < 1e-12
    assert membership_residual(basis, basis.reconstruct(rng.standard_normal(basis.dim))) < 1e-10
    for _ in range(100):
        d = visitation(mdp, random_policy(5, 3, rng)).values
        assert membership_residual(basis, d) < 1e-8


def test_state_measure_basis_contains_every_measure(rng):
    mdp = random_mdp(4, 3, 0.8, rng)
    basis = state_measure_basis(mdp)
    for _ in range(30):
        m = successor_measure(mdp, random_policy(4, 3, rng)).state_only()
        assert membership_residual(basis, m.ravel()) < 1e-8


def test_toy_vertices_include_switch_and_stay_corners():
    basis = visitation_basis(toy_mdp(0.9, [1.0, 0.0]))
    verts = feasible_region_vertices(basis)
    assert all(np.min(basis.reconstruct(v)) >= -1e-9 for v in verts)
    points = [basis.reconstruct(v) for v in verts]
    # pure "stay" from s0 and pure "switch" policies are corners
    assert any(np.allclose(p, state_major([0, 0, 1, 0]), atol=1e-9) for p in points)
    assert any(np.allclose(p, state_major([1 / 1.9, 0.9 / 1.9, 0, 0]), atol=1e-9) for p in points)


def test_vertices_match_pairwise_intersection_oracle():
    basis = visitation_basis(toy_mdp(0.9, [0.5, 0.5]))
    phi, b = basis.basis, basis.bias
    oracle = []
    for i, j in itertools.combinations(range(4), 2):
        sub = phi[[i, j]]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        w = np.linalg.solve(sub, -b[[i, j]])
        if np.min(phi @ w + b) >= -1e-9 and not any(np.allclose(w, o) for o in oracle):
            oracle.append(w)
    got = feasible_region_vertices(basis)
    assert len(got) == len(oracle)
    for w in oracle:
        assert any(np.allclose(w, v, atol=1e-9) for v in got)
    # brute-force grid never beats the vertex hull in any direction
    grid = np.stack(np.meshgrid(*[np.linspace(-2, 2, 201)] * 2), -1).reshape(-1, 2)
    feas = grid[np.min(grid @ phi.T + b, axis=1) >= 0]
    for c in np.random.default_rng(1).standard_normal((20, 2)):
        assert (feas @ c).max() <= max(v @ c for v in got) + 1e-9


@given(st.integers(0, 2**31))
def test_feasible_set_is_convex(seed):
    r = np.random.default_rng(seed)
    mdp = random_mdp(4, 2, 0.9, r)
    basis = visitation_basis(mdp)
    w1 = basis.coordinates(visitation(mdp, random_policy(4, 2, r)).values)
    w2 = basis.coordinates(visitation(mdp, random_policy(4, 2, r)).values)
    for t in np.linspace(0, 1, 11):
        assert np.min(basis.reconstruct(t * w1 + (1 - t) * w2)) >= -1e-12


def test_value_vectors_have_rank_at_most_d_plus_one(rng):
    mdp = random_mdp(4, 3, 0.9, rng)
    sm_basis = state_measure_basis(mdp)
    r = rng.random(4)
    vals, errs = [], []
    for _ in range(200):
        pi = random_policy(4, 3, rng)
        m = successor_measure(mdp, pi).state_only()
        q = m @ r
        vals.append(q)
        w = sm_basis.coordinates(m.ravel())
        errs.append(np.abs((sm_basis.reconstruct(w).reshape(12, 4) @ r) - q).max())
    sv = np.linalg.svd(np.array(vals), compute_uv=False)
    assert int(np.sum(sv > 1e-9 * sv[0])) <= sm_basis.dim + 1
    assert max(errs) < 1e-8


def test_basis_round_trip(rng):
    basis = visitation_basis(random_mdp(3, 2, 0.9, rng))
    back = loads_basis(dumps_basis(basis))
    np.testing.assert_array_equal(back.basis, basis.basis)
    np.testing.assert_array_equal(back.bias, basis.bias)
    with pytest.raises(ValueError):
        loads_basis(b"XXXXX" + dumps_basis(basis)[5:])
