import numpy as np
import pytest

from dctnn.decomp import (CPDecomposition, RankDeficientError, TuckerDecomposition, check_gram,
                          cp_gram, decomposition_from_dict, embed_superdiag, fix_signs)
from helpers import max_principal_sine, planted_cp, planted_tucker


@pytest.mark.parametrize("ranks", [(3, 3, 3), (4, 4, 4)])
def test_tucker_recovers_planted_subspaces(ranks):
    X, loadings, _ = planted_tucker(seed=1)
    dec = TuckerDecomposition(ranks=ranks).fit(X)
    for est, true in zip(dec.loadings_, loadings):
        assert np.arcsin(min(max_principal_sine(est, true), 1.0)) < 1e-6
        np.testing.assert_allclose(est.T @ est, np.eye(est.shape[1]), atol=1e-10)


def test_tucker_exact_rank_reconstructs_and_round_trips():
    X, _, _ = planted_tucker(seed=2)
    dec = TuckerDecomposition(ranks=(3, 3, 3)).fit(X)
    cores = dec.transform(X)
    assert cores.shape == (X.shape[0], 3, 3, 3)
    np.testing.assert_allclose(dec.inverse_transform(cores), X, atol=1e-10)
    back = decomposition_from_dict(dec.to_dict())
    np.testing.assert_allclose(back.transform(X), cores, atol=1e-12)


def test_hooi_energy_is_monotone_on_noisy_data():
    X, _, _ = planted_tucker(seed=3, noise=0.5)
    dec = TuckerDecomposition(ranks=(2, 3, 2), hooi_iters=30, tol=0).fit(X)
    h = np.array(dec.objective_history_)
    assert h.size > 2
    assert np.all(np.diff(h) >= -1e-9 * h[0])


def test_tucker_rejects_bad_ranks():
    X = np.zeros((5, 3, 3))
    with pytest.raises(ValueError):
        TuckerDecomposition(ranks=(4, 2)).fit(X)
    with pytest.raises(ValueError):
        TuckerDecomposition(ranks=(2,)).fit(X)


def test_cp_overspecified_reconstructs_collinear_signal():
    X, _, _ = planted_cp(n=200, seed=0)
    dec = CPDecomposition(rank=16, random_state=0).fit(X)
    rec = dec.inverse_transform(dec.transform(X))
    rel = np.linalg.norm(rec - X) / np.linalg.norm(X)
    assert rel < 0.05
    for a in dec.factors_:
        np.testing.assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-10)


def test_als_residual_is_monotone():
    X, _, _ = planted_cp(n=100, dims=(10, 10, 10), rank=5, seed=4)
    X = X + 0.05 * np.random.default_rng(0).standard_normal(X.shape)
    dec = CPDecomposition(rank=5, tol=0, als_iters=40, random_state=0).fit(X)
    h = np.array(dec.fit_history_)
    assert np.all(np.diff(h) <= 1e-10)


def test_cp_coefficients_solve_the_gram_system():
    X, _, _ = planted_cp(n=50, dims=(8, 8, 8), rank=4, seed=5)
    dec = CPDecomposition(rank=4, random_state=0).fit(X)
    c = dec.transform(X)
    np.testing.assert_allclose(c @ dec.gram_, dec.moments(X), atol=1e-8)
    back = decomposition_from_dict(dec.to_dict())
    np.testing.assert_allclose(back.transform(X), c, atol=1e-10)


def test_cp_gram_and_conditioning():
    a = [np.eye(3), np.eye(3)]
    np.testing.assert_array_equal(cp_gram(a), np.eye(3))
    with pytest.raises(RankDeficientError):
        check_gram(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_fix_signs_and_superdiagonal():
    a = fix_signs(np.array([[-3.0, 1.0], [1.0, -2.0]]))
    # the largest-magnitude entry of every column becomes positive
    assert a[0, 0] == 3.0 and a[1, 1] == 2.0
    t = embed_superdiag([1.0, 2.0], 3)
    assert t[1, 1, 1] == 2.0 and t.sum() == 3.0


def test_estimator_api():
    X, _, _ = planted_tucker(n=20, seed=6)
    dec = TuckerDecomposition(ranks=(2, 2, 2))
    assert dec.get_params()["ranks"] == (2, 2, 2)
    out = dec.fit_transform(X)
    assert out.shape == (20, 2, 2, 2)
    with pytest.raises(ValueError):
        dec.transform(np.zeros((2, 3, 3, 3)))
