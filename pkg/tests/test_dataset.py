import numpy as np
import pytest
from scipy.stats import binomtest

from psm.dataset import (OfflineDataset, build_dataset, dumps_dataset, load_dataset,
                         loads_dataset, save_dataset)
from psm.envs import build_gridworld, open_grid
from psm.mdp import random_mdp


def test_uniform_collection_density():
    mdp = build_gridworld(open_grid(8))
    n = 10**5
    ds = build_dataset(mdp, None, n, 0)
    p = 1 / mdp.n_pairs
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(ds.rho_sa - p) < 4 * sigma)
    assert ds.coverage() == 1.0
    assert ds.rho_sa.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_transition_is_one_hot():
    ds = build_dataset(build_gridworld(open_grid(3)), None, 1, 4)
    assert np.count_nonzero(ds.rho_sa) == 1
    assert ds.coverage() == pytest.approx(1 / 45)


def test_next_state_frequencies_match_dynamics():
    rng = np.random.default_rng(2)
    mdp = random_mdp(3, 2, 0.9, rng)
    ds = build_dataset(mdp, None, 60000, 1)
    counts = np.zeros((6, 3), dtype=int)
    np.add.at(counts, (ds.records[:, 0] * 2 + ds.records[:, 1], ds.records[:, 2]), 1)
    for sa in range(6):
        for t in range(3):
            ci = binomtest(int(counts[sa, t]), int(counts[sa].sum()), mdp.pair_transition[sa, t]).pvalue
            assert ci > 1e-4


def test_validation():
    with pytest.raises(ValueError):
        OfflineDataset.from_records([[0, 5, 0]], 2, 2)
    with pytest.raises(ValueError):
        OfflineDataset.from_records(np.zeros((0, 3)), 2, 2)
    with pytest.raises(ValueError):
        build_dataset(build_gridworld(open_grid(2)), None, 0, 0)
    ds = OfflineDataset.from_records([[0, 0, 1]], 2, 2)
    with pytest.raises(ValueError):
        ds.require_coverage()


def test_exact_dataset():
    mdp = random_mdp(3, 2, 0.9, np.random.default_rng(0))
    ds = OfflineDataset.exact(mdp)
    np.testing.assert_allclose(ds.p_hat, mdp.pair_transition)
    np.testing.assert_allclose(ds.rho_s, 1 / 3)
    assert ds.size == 0


def test_text_round_trip(tmp_path):
    ds = build_dataset(build_gridworld(open_grid(3)), None, 500, 3)
    path = tmp_path / "d.txt"
    save_dataset(ds, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.records, ds.records)
    assert dumps_dataset(back) == dumps_dataset(ds)
    with pytest.raises(ValueError):
        loads_dataset("nonsense 1 2 3\n")
