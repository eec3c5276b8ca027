import math
import types

import numpy as np
import pytest

from dmlbench.errors import ConfigError, ScheduleError, TrainingDivergedError
from dmlbench.losses import LossConfig
from dmlbench.numeric import Rng
from dmlbench.trainer import AdamW, TrainConfig, lr_schedule, train


def toy_data(n=24, seed=0):
    """Tiny separable two-class corpus: class c texts reuse tokens wc0..wc2."""
    rng = Rng(seed)
    texts, labels = [], []
    for i in range(n):
        c = i % 2
        words = [f"w{c}{rng.randint(3)}" for _ in range(4)]
        texts.append(" ".join(words))
        labels.append(c)
    return texts, np.array(labels)


def small_config(loss=None, **kw):
    defaults = dict(
        epochs=3,
        batch_size=8,
        lr=1e-2,
        vocab_size=64,
        embed_dim=8,
        out_dim=4,
        seed=11,
    )
    defaults.update(kw)
    return TrainConfig(loss=loss if loss is not None else LossConfig(), **defaults)


class TestSchedule:
    def test_warmup_ramp(self):
        # 6 warmup steps out of 100
        assert lr_schedule(0, 100, 2.0, 0.06) == 0.0
        assert lr_schedule(3, 100, 2.0, 0.06) == 1.0
        assert lr_schedule(6, 100, 2.0, 0.06) == 2.0

    def test_linear_decay(self):
        assert lr_schedule(53, 100, 2.0, 0.06) == pytest.approx(2.0 * 47 / 94)
        assert lr_schedule(99, 100, 2.0, 0.06) == pytest.approx(2.0 / 94)
        assert lr_schedule(99, 100, 2.0, 0.06) > 0.0

    def test_no_warmup(self):
        assert lr_schedule(0, 10, 1.0, 0.0) == 1.0

    def test_monotone_after_warmup(self):
        values = [lr_schedule(s, 50, 1.0, 0.1) for s in range(5, 50)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_errors(self):
        with pytest.raises(ScheduleError):
            lr_schedule(0, 0, 1.0, 0.1)
        with pytest.raises(ScheduleError):
            lr_schedule(-1, 10, 1.0, 0.1)
        with pytest.raises(ScheduleError):
            lr_schedule(10, 10, 1.0, 0.1)
        with pytest.raises(ScheduleError):
            lr_schedule(0, 10, 1.0, 1.5)


class TestAdamW:
    def test_single_step_by_hand(self):
        w = np.array([1.0])
        opt = AdamW([("w", w)])
        opt.step({"w": np.array([0.5])}, lr=0.1, weight_decay=0.0)
        # bias-corrected m=0.5, v=0.25 on step 1: update = 0.5/(0.5+eps)
        expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8))
        assert w[0] == pytest.approx(expected, abs=1e-12)

    def test_first_step_magnitude_is_lr(self):
        # Adam's first unclipped step is lr regardless of gradient size
        for g in (1e-4, 1.0):
            w = np.array([0.0])
            AdamW([("w", w)], clip_norm=100.0).step(
                {"w": np.array([g])}, lr=0.05, weight_decay=0.0
            )
            assert w[0] == pytest.approx(-0.05, rel=1e-3)

    def test_zero_lr_freezes_exactly(self):
        w = np.array([1.234, -0.5])
        before = w.copy()
        opt = AdamW([("w", w)])
        for _ in range(3):
            opt.step({"w": np.array([3.0, -2.0])}, lr=0.0, weight_decay=0.5)
        assert np.array_equal(w, before)

    def test_weight_decay_shrinks_without_gradient(self):
        w = np.array([2.0, -4.0])
        AdamW([("w", w)]).step({"w": np.zeros(2)}, lr=0.1, weight_decay=0.5)
        assert np.allclose(w, np.array([2.0, -4.0]) * (1.0 - 0.1 * 0.5))

    def test_global_clip_across_blocks(self):
        a1, b1 = np.zeros(2), np.zeros(2)
        a2, b2 = np.zeros(2), np.zeros(2)
        ga = np.array([6.0, 0.0])
        gb = np.array([0.0, 8.0])  # joint norm 10, clip 5 halves both
        AdamW([("a", a1), ("b", b1)], clip_norm=5.0).step(
            {"a": ga, "b": gb}, lr=0.1, weight_decay=0.0
        )
        AdamW([("a", a2), ("b", b2)], clip_norm=100.0).step(
            {"a": ga / 2, "b": gb / 2}, lr=0.1, weight_decay=0.0
        )
        assert np.array_equal(a1, a2)
        assert np.array_equal(b1, b2)

    def test_no_clip_below_threshold(self):
        a1 = np.zeros(2)
        a2 = np.zeros(2)
        g = np.array([0.3, 0.4])
        AdamW([("a", a1)], clip_norm=5.0).step({"a": g}, 0.1, 0.0)
        AdamW([("a", a2)], clip_norm=0.5001).step({"a": g}, 0.1, 0.0)
        assert np.array_equal(a1, a2)

    def test_updates_in_place(self):
        w = np.ones(3)
        opt = AdamW([("w", w)])
        opt.step({"w": np.ones(3)}, 0.1, 0.0)
        assert opt.blocks[0][1] is w


class TestTrain:
    def test_bit_identical_reruns(self):
        texts, labels = toy_data()
        a = train(texts, labels, 2, small_config(LossConfig("supcon", beta=0.5)))
        b = train(texts, labels, 2, small_config(LossConfig("supcon", beta=0.5)))
        for (name, xa), (_, xb) in zip(a.params.blocks(), b.params.blocks()):
            assert np.array_equal(xa, xb), name
        assert a.steps == b.steps

    def test_blend_one_matches_plain_cce(self):
        texts, labels = toy_data()
        cce = train(texts, labels, 2, small_config(LossConfig("cce")))
        pa = train(
            texts, labels, 2, small_config(LossConfig("proxyanchor", beta=1.0))
        )
        for (name, xa), (_, xb) in zip(cce.params.blocks(), pa.params.blocks()):
            assert np.array_equal(xa, xb), name
        assert [v for _, v in cce.steps] == [v for _, v in pa.steps]

    def test_blend_zero_matches_dml_only(self):
        texts, labels = toy_data()
        blended = train(
            texts, labels, 2, small_config(LossConfig("proxyanchor", beta=0.0))
        )
        pure = train(
            texts, labels, 2,
            small_config(LossConfig("proxyanchor", beta=0.0), dml_only=True),
        )
        assert [v for _, v in blended.steps] == [v for _, v in pure.steps]
        for (name, xa), (_, xb) in zip(blended.params.blocks(), pure.params.blocks()):
            assert np.array_equal(xa, xb), name
        assert np.array_equal(blended.bank.matrix, pure.bank.matrix)

    def test_seed_changes_model(self):
        texts, labels = toy_data()
        a = train(texts, labels, 2, small_config(seed=1))
        b = train(texts, labels, 2, small_config(seed=2))
        assert not np.array_equal(a.params.projection, b.params.projection)

    def test_loss_decreases(self):
        texts, labels = toy_data(n=32)
        model = train(texts, labels, 2, small_config(epochs=12))
        first = model.steps[0][1]
        last = model.steps[-1][1]
        assert last < first

    def test_step_count(self):
        texts, labels = toy_data(n=10)
        model = train(texts, labels, 2, small_config(epochs=3, batch_size=4))
        assert len(model.steps) == 3 * math.ceil(10 / 4)
        assert [s for s, _ in model.steps] == list(range(9))

    def test_proxy_rows_stay_unit(self):
        texts, labels = toy_data()
        model = train(
            texts, labels, 2, small_config(LossConfig("proxyanchor", beta=0.5))
        )
        norms = np.linalg.norm(model.bank.matrix, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_proxy_renorm_off(self):
        texts, labels = toy_data()
        model = train(
            texts, labels, 2,
            small_config(LossConfig("proxyanchor", beta=0.5), proxy_renorm=False),
        )
        norms = np.linalg.norm(model.bank.matrix, axis=1)
        assert not np.allclose(norms, 1.0, atol=1e-6)

    def test_cce_has_no_bank(self):
        texts, labels = toy_data()
        model = train(texts, labels, 2, small_config())
        assert model.bank is None

    def test_nonproxy_variant_has_no_bank(self):
        texts, labels = toy_data()
        model = train(texts, labels, 2, small_config(LossConfig("npairs", beta=0.5)))
        assert model.bank is None

    def test_log_dict_shape(self):
        texts, labels = toy_data(n=8)
        model = train(texts, labels, 2, small_config(epochs=2, batch_size=8))
        log = model.log_dict()
        assert len(log["steps"]) == 2
        assert set(log["steps"][0]) == {"step", "loss"}
        assert log["config"]["loss"]["variant"] == "cce"
        assert log["config"]["epochs"] == 2

    def test_input_validation(self):
        texts, labels = toy_data()
        with pytest.raises(ConfigError):
            train([], np.array([]), 2, small_config())
        with pytest.raises(ConfigError):
            train(texts, labels[:-1], 2, small_config())
        with pytest.raises(ConfigError):
            train(texts, labels, 1, small_config())  # labels exceed range

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            small_config(epochs=0)
        with pytest.raises(ConfigError):
            small_config(lr=-1.0)
        with pytest.raises(ConfigError):
            small_config(LossConfig("cce"), dml_only=True)

    def test_divergence_detected(self, monkeypatch):
        texts, labels = toy_data()
        fake = types.SimpleNamespace(
            value=float("nan"), grad_embeddings=np.zeros((8, 2))
        )
        monkeypatch.setattr("dmlbench.trainer.cce_loss", lambda *a, **k: fake)
        with pytest.raises(TrainingDivergedError):
            train(texts, labels, 2, small_config())
