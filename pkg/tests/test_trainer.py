import math
import warnings

import numpy as np
import pytest

from fuse3d import model as M
from fuse3d.params import ParamStore
from fuse3d.scenes import SceneSpec, gen_scenes
from fuse3d.trainer import (LOG_HEADER, TrainConfig, TrainLog, evaluate, load_checkpoint,
                            lr_at, model_digest, prepare_samples, save_checkpoint,
                            sgd_step, train)

SMALL = dict(local_widths=(8,), global_widths=(8, 16), head_widths=(16,),
             seg_widths=(8, 8, 8))


@pytest.fixture(scope="module")
def tiny_scene():
    return gen_scenes(SceneSpec(image_size=(32, 32), points_per_scene=800, seed=7))


def scalar_store(p=0.0):
    s = ParamStore()
    s.add("p", np.array([p]))
    return s


class TestSchedule:
    def test_examples(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 0.01
        assert lr_at(12, cfg) == 0.0025
        assert lr_at(39, cfg) == 7.8125e-5

    def test_closed_form(self):
        cfg = TrainConfig()
        for e in range(40):
            assert lr_at(e, cfg) == 0.01 / 2 ** (e // 5)

    @pytest.mark.parametrize("epoch", [-1, 40])
    def test_out_of_range(self, epoch):
        with pytest.raises(ValueError):
            lr_at(epoch, TrainConfig())

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr0, cfg.momentum, cfg.weight_decay, cfg.epochs, cfg.halve_every) == \
            (0.01, 0.9, 0.0001, 40, 5)

    @pytest.mark.parametrize("kw", [dict(lr0=0), dict(epochs=0), dict(halve_every=0),
                                    dict(merge_mode="x"), dict(cloud_scope="all")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSgd:
    def test_zero_grad_no_change(self):
        s = scalar_store(1.0)
        sgd_step(s, 0.1, 0.9, 0.0)
        assert s["p"][0] == 1.0

    def test_vanilla_step(self):
        s = scalar_store(1.0)
        s.grads["p"][:] = 1.0
        sgd_step(s, 0.1, 0.0, 0.0)
        assert s["p"][0] == pytest.approx(0.9, abs=1e-15)
        assert not s.grads["p"].any()

    def test_two_momentum_steps(self):
        s = scalar_store(0.0)
        for _ in range(2):
            s.grads["p"][:] = 1.0
            sgd_step(s, 0.1, 0.9, 0.0)
        assert s["p"][0] == pytest.approx(-0.29, abs=1e-15)

    def test_weight_decay(self):
        s = scalar_store(2.0)
        sgd_step(s, 0.5, 0.0, 0.1)
        assert s["p"][0] == pytest.approx(2.0 - 0.5 * 0.2, abs=1e-15)

    def test_buffers_untouched(self):
        s = scalar_store(1.0)
        s.add("running", np.array([3.0]), buffer=True)
        s.grads["running"][:] = 1.0
        sgd_step(s, 0.1, 0.9, 0.1)
        assert s["running"][0] == 3.0
        assert "running" not in s.velocity

    def test_vanilla_equivalence(self):
        rng = np.random.default_rng(0)
        s = ParamStore()
        s.add("w", rng.normal(size=(3, 4)))
        w0 = s["w"].copy()
        g = rng.normal(size=(3, 4))
        s.grads["w"][:] = g
        sgd_step(s, 0.05, 0.0, 0.0)
        np.testing.assert_array_equal(s["w"], w0 - 0.05 * g)


class TestLog:
    def test_roundtrip(self):
        from fuse3d.trainer import EpochRecord
        log = TrainLog([EpochRecord(0, 0.01, 1.25, 0.5, 1.2345),
                        EpochRecord(1, 0.005, 0.75, float("nan"), 0.0)])
        text = log.to_csv()
        assert text.splitlines()[0] == ",".join(LOG_HEADER)
        back = TrainLog.parse(text)
        assert back.records[0].lr == 0.01 and back.records[0].seconds == 1.234
        assert math.isnan(back.records[1].val_miou)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            TrainLog.parse("a,b\n")


class TestTraining:
    def test_empty_train_set(self):
        with pytest.raises(ValueError):
            train(TrainConfig(epochs=1), [])

    def test_empty_eval_set(self, tiny_scene):
        cfg = TrainConfig(epochs=1, **SMALL)
        model, _ = train(cfg, tiny_scene)
        with pytest.raises(ValueError):
            evaluate(model, cfg, [])

    def test_architecture_mismatch(self, tiny_scene):
        cfg = TrainConfig(epochs=1, **SMALL)
        model, _ = train(cfg, tiny_scene)
        with pytest.raises(ValueError):
            evaluate(model, TrainConfig(epochs=1), tiny_scene)

    def test_label_out_of_range(self, tiny_scene):
        with pytest.raises(ValueError):
            train(TrainConfig(epochs=1, num_classes=3, **SMALL), tiny_scene)

    def test_small_step_decreases_loss(self, tiny_scene):
        views = prepare_samples(tiny_scene, TrainConfig())
        for seed in range(20):
            cfg = TrainConfig(seed=seed, **SMALL)
            model = M.init_model(cfg.model_config(), seed)
            before = M.loss_and_grad(model, views[0], update_stats=False)
            sgd_step(model.stores.values(), 1e-4, cfg.momentum, cfg.weight_decay)
            logits, _ = M.forward(model, views[0], update_stats=False)
            from fuse3d.metrics import cross_entropy
            after, _ = cross_entropy(logits, views[0].labels)
            assert after < before, seed

    def test_no_frustum_points_uses_rgb_path(self, tiny_scene):
        s = tiny_scene[0]
        from fuse3d.geometry import PointCloud
        empty = type(s)(s.rgb, s.labels, PointCloud(np.zeros((0, 3))), s.rig, 0, 0)
        cfg = TrainConfig(epochs=1, weight_decay=0.0, **SMALL)
        model, log = train(cfg, [empty])
        assert np.isfinite(log.records[0].train_loss)
        assert not any(np.any(v != 0) for k, v in model.p3d.velocity.items())

    def test_overfit_single_scene(self, tiny_scene):
        cfg = TrainConfig(epochs=200, halve_every=1000, seed=1, log_timing=False)
        model, log = train(cfg, tiny_scene)
        assert log.records[-1].train_loss < 0.05
        metrics, per_image = evaluate(model, cfg, tiny_scene)
        assert metrics.miou > 0.95
        assert len(per_image) == 1

    def test_deterministic_log(self, tiny_scene):
        cfg = TrainConfig(epochs=3, log_timing=False, **SMALL)
        m1, l1 = train(cfg, tiny_scene, tiny_scene)
        m2, l2 = train(cfg, tiny_scene, tiny_scene)
        assert l1.to_csv() == l2.to_csv()
        assert model_digest(m1) == model_digest(m2)

    def test_deterministic_with_timing_on(self, tiny_scene):
        cfg = TrainConfig(epochs=2, **SMALL)
        _, l1 = train(cfg, tiny_scene, tiny_scene)
        _, l2 = train(cfg, tiny_scene, tiny_scene)
        strip = [(r.epoch, r.lr, r.train_loss, r.val_miou) for r in l1.records]
        assert strip == [(r.epoch, r.lr, r.train_loss, r.val_miou) for r in l2.records]
        assert all(r.seconds > 0 for r in l1.records)

    def test_checkpoint_roundtrip(self, tiny_scene, tmp_path):
        cfg = TrainConfig(epochs=2, **SMALL)
        model, _ = train(cfg, tiny_scene)
        save_checkpoint(tmp_path / "m.lpnt", model, cfg)
        back, cfg2 = load_checkpoint(tmp_path / "m.lpnt")
        assert cfg2 == cfg
        assert model_digest(back) == model_digest(model)
        a = evaluate(model, cfg, tiny_scene)[0].miou
        assert evaluate(back, cfg2, tiny_scene)[0].miou == a

    def test_checkpoint_wrong_architecture(self, tiny_scene, tmp_path):
        cfg = TrainConfig(epochs=1, **SMALL)
        model, _ = train(cfg, tiny_scene)
        save_checkpoint(tmp_path / "m.lpnt", model, cfg)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "m.lpnt", TrainConfig())
