import numpy as np
import pytest

from dctnn.network import DualChannelNet
from dctnn.simgen import (SimConfig, SimDataset, SimGenerator, calibrate_labeler, cp_coefficients,
                          cp_factors, gen_dataset, make_labeler, refinement_values,
                          stratified_split, tucker_cores, tucker_loadings)


@pytest.fixture(scope="module")
def tucker_ds():
    return gen_dataset(regime="tucker", seed=11)


@pytest.fixture(scope="module")
def cp_ds():
    return gen_dataset(regime="cp", seed=12, n=400)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(regime="tt")
    with pytest.raises(ValueError):
        SimConfig(refinement_shape=(2, 3, 4))
    with pytest.raises(ValueError):
        SimConfig(split=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        SimConfig(n=201)
    assert SimConfig(regime="cp").target == pytest.approx(3.3)
    assert SimConfig(logit_target=2.0).target == 2.0
    assert SimConfig.from_dict(SimConfig().to_dict()) == SimConfig()


def test_tucker_loadings_and_cores():
    cfg = SimConfig()
    rng = np.random.default_rng(0)
    for u in tucker_loadings(cfg, rng):
        assert u.shape == (32, 3)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)
    cores = tucker_cores(cfg, rng, 50)
    np.testing.assert_allclose(np.linalg.norm(cores.reshape(50, -1), axis=1), 5.0)


def test_tucker_signal_norm_equals_core_norm(tucker_ds):
    gen = tucker_ds.structure
    from dctnn.simgen import signal
    s = signal(tucker_ds.cores[:5], gen)
    np.testing.assert_allclose(np.linalg.norm(s.reshape(5, -1), axis=1), 5.0)


def test_cp_factors_and_coefficients():
    cfg = SimConfig(regime="cp")
    rng = np.random.default_rng(1)
    for a in cp_factors(cfg, rng):
        assert a.shape == (32, 12)
        np.testing.assert_allclose(np.linalg.norm(a, axis=0), 1.0, atol=1e-10)
        # every column overlaps the first one
        assert np.all(np.abs(a[:, 0] @ a[:, 1:]) > 0)
    c = cp_coefficients(cfg, rng, 100)
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 8.0)


def test_cp_coefficients_are_ar1():
    cfg = SimConfig(regime="cp")
    c = cp_coefficients(cfg, np.random.default_rng(2), 10_000, rescale=False)
    lag1 = np.corrcoef(c[:, :-1].ravel(), c[:, 1:].ravel())[0, 1]
    assert lag1 == pytest.approx(0.7, abs=0.05)


def test_refinement_magnitudes():
    cfg = SimConfig()
    s = np.random.default_rng(3).normal(size=(40, 18))
    u = refinement_values(cfg, np.random.default_rng(4), s)
    ratio = np.abs(u) / np.abs(s)
    assert np.all((ratio >= 5.0) & (ratio <= 8.0))
    assert set(np.unique(np.sign(u))) == {-1.0, 1.0}


def test_dataset_layout(tucker_ds):
    ds = tucker_ds
    assert ds.X.shape == (2000, 32, 32, 32)
    assert np.sum(ds.y == 0) == np.sum(ds.y == 1) == 1000
    sizes = {k: v.size for k, v in ds.splits.items()}
    assert sizes == {"train": 1200, "calibration": 400, "test": 400}
    for idx in ds.splits.values():
        assert np.sum(ds.y[idx] == 1) * 2 == idx.size
    np.testing.assert_allclose(ds.pi, 1 / (1 + np.exp(-ds.z)))
    assert ds.n_candidates >= 2000


def test_support_and_noise(tucker_ds):
    ds = tucker_ds
    st = ds.structure
    from dctnn.simgen import signal
    n = 20
    resid = (ds.X[:n] - signal(ds.cores[:n], st)).reshape(n, -1)
    on = resid[:, st.support]
    np.testing.assert_allclose(on, ds.refinement[:n].reshape(n, -1), atol=0.6)
    off = np.delete(resid, st.support, axis=1)
    assert np.mean(off ** 2) == pytest.approx(0.01, rel=0.1)
    assert st.support.size == 18 and np.unique(st.support).size == 18


def test_table_statistics_in_range(tucker_ds, cp_ds):
    s = tucker_ds.summary()
    assert s["z_mean_y1"] == pytest.approx(2.542, abs=0.8)
    assert s["pi_mean_y1"] == pytest.approx(0.825, abs=0.1)
    assert s["pi_mean_y0"] == pytest.approx(0.189, abs=0.1)
    assert cp_ds.summary()["pi_mean_y1"] == pytest.approx(0.820, abs=0.1)


def test_same_seed_same_data():
    a = gen_dataset(n=100, seed=5)
    b = gen_dataset(n=100, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    c = gen_dataset(n=100, seed=6)
    assert not np.array_equal(a.X, c.X)


def test_save_load_round_trip(tmp_path, cp_ds):
    cp_ds.save(tmp_path / "d")
    back = SimDataset.load(tmp_path / "d")
    np.testing.assert_array_equal(back.X, cp_ds.X)
    np.testing.assert_array_equal(back.y, cp_ds.y)
    np.testing.assert_allclose(back.pi, cp_ds.pi, rtol=1e-9)
    assert back.config == cp_ds.config
    for k in cp_ds.splits:
        np.testing.assert_array_equal(back.splits[k], cp_ds.splits[k])
    np.testing.assert_array_equal(back.structure.support, cp_ds.structure.support)
    assert back.has_oracle


def test_zero_labeler_is_uninformative():
    net = DualChannelNet((3, 3, 3), (2, 3, 3), depth=2).zero_params()
    out = net.forward(np.ones((4, 3, 3, 3)), refinement=np.ones((4, 2, 3, 3)))
    np.testing.assert_array_equal(out.pre_link, 0.0)
    np.testing.assert_array_equal(out.output, 0.5)


def test_calibration_hits_the_target():
    cfg = SimConfig()
    rng = np.random.default_rng(7)
    net = make_labeler(cfg, (3, 3, 3), rng)
    cores = tucker_cores(cfg, rng, 500)
    u = rng.normal(size=(500, 2, 3, 3))
    calibrate_labeler(net, cores, u, 2.5)
    z = net.forward(cores, refinement=u).pre_link
    assert np.mean(np.abs(z)) == pytest.approx(2.5)
    assert np.median(z) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        calibrate_labeler(DualChannelNet((1,), (1,), depth=0).zero_params(), np.ones((3, 1)),
                          np.ones((3, 1)), 1.0)


def test_budget_exhaustion_is_reported():
    with pytest.raises(RuntimeError, match="budget"):
        SimGenerator(SimConfig(n=200, budget=50, batch=50)).generate()


def test_stratified_split_fractions():
    y = np.repeat([0, 1], 50)
    parts = stratified_split(y, (0.6, 0.2, 0.2), np.random.default_rng(0))
    allidx = np.sort(np.concatenate(list(parts.values())))
    np.testing.assert_array_equal(allidx, np.arange(100))
    assert parts["train"].size == 60
