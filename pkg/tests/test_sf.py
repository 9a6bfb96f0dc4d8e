import numpy as np
import pytest
from hypothesis import given, strategies as st

from psm.flow import membership_residual, state_measure_basis
from psm.mdp import random_mdp, random_policy
from psm.oracle import state_measure
from psm.sf import RankCapacityError, contract_basis, sf_decompose, successor_features


def _setup(seed, n_s=6, n_a=3):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n_s, n_a, 0.9, rng)
    return rng, mdp, state_measure_basis(mdp), rng.dirichlet(np.ones(n_s))


def test_full_rank_decomposition_is_exact():
    _, _, basis, rho = _setup(0)
    dec = sf_decompose(basis, rho_s=rho)
    assert dec.error < 1e-10
    assert dec.rank <= 6


@given(st.integers(0, 2**31))
def test_psi_matches_measure_contraction(seed):
    rng, mdp, basis, rho = _setup(seed)
    dec = sf_decompose(basis, rho_s=rho)
    feats = dec.state_features()
    pi = random_policy(6, 3, rng)
    m = state_measure(mdp, pi)
    w = basis.coordinates(m.ravel())
    np.testing.assert_allclose(dec.psi(w), successor_features(m, feats), atol=1e-9)


def test_state_features_whitened():
    _, _, basis, rho = _setup(1)
    dec = sf_decompose(basis, rho_s=rho)
    f = dec.state_features()
    cov = (f * rho[:, None]).T @ dec.varphi
    np.testing.assert_allclose(cov, np.eye(dec.rank), atol=1e-10)


@given(st.integers(0, 2**31))
def test_contracted_basis_holds_every_policy(seed):
    rng, mdp, basis, _ = _setup(seed)
    f = rng.standard_normal((6, 4))
    cb = contract_basis(basis, 6, f)
    psi = successor_features(state_measure(mdp, random_policy(6, 3, rng)), f)
    assert membership_residual(cb, psi.ravel()) < 1e-9


def test_truncated_rank_bounds_error():
    _, _, basis, rho = _setup(2)
    full = sf_decompose(basis, rho_s=rho)
    low = sf_decompose(basis, rank=2, rho_s=rho)
    assert low.rank == 2 and low.error >= full.error
    with pytest.raises(RankCapacityError):
        sf_decompose(basis, rank=100, rho_s=rho)


def test_requires_rho_for_basis():
    _, _, basis, _ = _setup(3)
    with pytest.raises(ValueError):
        sf_decompose(basis)
    with pytest.raises(ValueError):
        sf_decompose(basis, rho_s=np.zeros(6))


def test_feature_shape_checked():
    with pytest.raises(ValueError):
        successor_features(np.ones((4, 3)), np.ones(5))
