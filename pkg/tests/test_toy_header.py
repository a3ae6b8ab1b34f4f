import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from gradcheck import model_gradient_check, random_batch
from mlod.errors import NonFiniteLoss, ShapeMismatch
from mlod.losses import LossWeights
from mlod.toy_header import (Dataset, HeaderConfig, ToyHeaderModel, TrainConfig, forward, loss_and_grads,
                             param_shapes, train)

CFG = HeaderConfig()


def separable_set(rng, n=64):
    """One object class: bright image crops and dense BEV crops are objects, dark/empty ones are not."""
    y = (np.arange(n) % 2).astype(np.int64)
    img = rng.uniform(0, 0.3, size=(n, 7, 7, 3)) + 0.6 * y[:, None, None, None]
    bev = rng.uniform(0, 0.2, size=(n, 7, 7, 6)) + 0.7 * y[:, None, None, None]
    reg = rng.normal(scale=0.3, size=(n, 10)) * y[:, None]
    ang = np.column_stack([np.ones(n), np.zeros(n)])
    return Dataset(img, bev, np.ones((n, 7, 7), np.uint8), y, y.copy(), reg, reg.copy(), ang)


class TestModel:
    def test_parameter_count(self):
        m = ToyHeaderModel.init(CFG, seed=0)
        H = 32
        expect = (147 + 1) * H + (294 + 1) * H + 2 * (H + 1) * (4 + 10) + (2 * H + 1) * (4 + 10 + 2)
        assert m.num_parameters == expect
        assert set(m.params) == set(param_shapes(CFG))

    def test_init_deterministic(self):
        a, b = ToyHeaderModel.init(CFG, seed=4), ToyHeaderModel.init(CFG, seed=4)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_zero_weights_zero_scores(self, rng):
        batch = random_batch(rng)
        out = forward(ToyHeaderModel.zeros(CFG), batch.img, batch.bev, batch.mask)
        for v in out.arrays().values():
            assert not v.any()

    def test_all_ones_mask_is_identity(self, rng):
        m = ToyHeaderModel.init(CFG, seed=1)
        batch = random_batch(rng)
        a = forward(m, batch.img, batch.bev, np.ones((8, 7, 7)))
        b = forward(m, batch.img, batch.bev)
        for k, v in a.arrays().items():
            assert np.array_equal(v, b.arrays()[k])

    def test_masked_cell_has_no_effect(self, rng):
        m = ToyHeaderModel.init(CFG, seed=1)
        batch = random_batch(rng)
        mask = np.ones((8, 7, 7), np.uint8)
        mask[:, 3, 2] = 0
        base = forward(m, batch.img, batch.bev, mask)
        img = batch.img.copy()
        img[:, 3, 2, :] += 5.0
        probe = forward(m, img, batch.bev, mask)
        for k, v in base.arrays().items():
            assert np.array_equal(v, probe.arrays()[k])
        # and an unmasked cell does matter
        img = batch.img.copy()
        img[:, 3, 3, :] += 5.0
        assert not np.array_equal(forward(m, img, batch.bev, mask).y_img, base.y_img)

    def test_outputs_finite_and_shaped(self, rng):
        batch = random_batch(rng)
        out = forward(ToyHeaderModel.init(CFG, 2), batch.img, batch.bev, batch.mask)
        assert out.y_fusion.shape == (8, 4) and out.s_img.shape == (8, 10) and out.a_fusion.shape == (8, 2)
        assert all(np.all(np.isfinite(v)) for v in out.arrays().values())

    def test_shape_mismatch(self, rng):
        m = ToyHeaderModel.init(CFG, 0)
        batch = random_batch(rng)
        with pytest.raises(ShapeMismatch):
            forward(m, batch.img[:, :6], batch.bev)
        with pytest.raises(ShapeMismatch):
            forward(m, batch.img, batch.bev[:4])
        with pytest.raises(ShapeMismatch):
            forward(m, batch.img, batch.bev, np.ones((8, 7, 6)))


def test_backprop_matches_finite_differences_every_coordinate():
    worst, skipped, checked = model_gradient_check(0, h=1e-4)
    assert checked > 15000
    assert skipped <= 0.01
    assert worst <= 1e-3


def test_backprop_without_mask():
    worst, skipped, _ = model_gradient_check(1, coords_per_param=30, use_mask=False)
    assert worst <= 1e-3 and skipped <= 0.01


def test_sub_loss_gradient_scales_with_ratio(rng):
    m = ToyHeaderModel.init(CFG, seed=3)
    batch = random_batch(rng)
    _, g1 = loss_and_grads(m, batch, LossWeights.with_ratio(1.0))
    _, g0 = loss_and_grads(m, batch, LossWeights.with_ratio(0.001))
    for name in ("W_img_cls", "b_img_cls", "W_img_reg", "b_img_reg"):
        n1 = np.linalg.norm(g1[name])
        assert n1 > 0
        assert np.linalg.norm(g0[name]) <= 0.001 * n1 * (1 + 1e-9)


class TestTrain:
    def test_lr_zero_keeps_parameters(self, rng):
        m = ToyHeaderModel.init(CFG, seed=0)
        res = train(m, separable_set(rng), TrainConfig(steps=5, lr=0.0))
        assert all(np.array_equal(res.model.params[k], m.params[k]) for k in m.params)
        assert len(res.losses) == 5

    def test_does_not_mutate_input(self, rng):
        m = ToyHeaderModel.init(CFG, seed=0)
        before = m.copy()
        train(m, separable_set(rng), TrainConfig(steps=3, lr=1e-2))
        assert all(np.array_equal(before.params[k], m.params[k]) for k in m.params)

    def test_loss_decreases_on_separable_set(self, rng):
        data = separable_set(rng)
        cfg = TrainConfig(steps=200, lr=1e-3, batch_size=64, decay_every=1000)
        with threadpool_limits(1):
            res = train(ToyHeaderModel.init(CFG, seed=0), data, cfg)
        L = res.losses
        assert np.all(L[50:] < L[:-50])
        windows = L.reshape(4, 50).mean(axis=1)
        assert np.all(np.diff(windows) < 0)

    def test_bitwise_deterministic(self, rng):
        data = separable_set(rng, 100)
        cfg = TrainConfig(steps=60, lr=1e-3, seed=9)
        with threadpool_limits(1):
            a = train(ToyHeaderModel.init(CFG, 1), data, cfg)
            b = train(ToyHeaderModel.init(CFG, 1), data, cfg)
        assert np.array_equal(a.losses, b.losses)
        assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)

    def test_non_finite_loss_reports_step(self, rng):
        data = separable_set(rng, 16)
        data.reg_bev[:] = np.inf
        with pytest.raises(NonFiniteLoss) as e:
            train(ToyHeaderModel.init(CFG, 0), data, TrainConfig(steps=3, lr=1e-3, batch_size=16))
        assert e.value.step == 0

    def test_empty_dataset(self, rng):
        with pytest.raises(ValueError):
            train(ToyHeaderModel.init(CFG, 0), separable_set(rng).subset(np.arange(0)), TrainConfig(steps=1))

    def test_lr_schedule(self):
        cfg = TrainConfig(lr=1e-4, decay=0.5, decay_every=500)
        assert cfg.lr_at(0) == 1e-4 and cfg.lr_at(499) == 1e-4 and cfg.lr_at(500) == 5e-5 and cfg.lr_at(1999) == 1.25e-5

    @pytest.mark.parametrize("kw", [dict(steps=0), dict(lr=-1.0), dict(batch_size=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_dataset_subset_and_concat(rng):
    d = separable_set(rng, 10)
    d.meta = {"ids": np.arange(10), "names": [f"p{i}" for i in range(10)]}
    s = d.subset([3, 1])
    assert list(s.meta["ids"]) == [3, 1] and s.meta["names"] == ["p3", "p1"]
    c = Dataset.concat([s, d.subset([0])])
    assert len(c) == 3 and list(c.meta["ids"]) == [3, 1, 0]
