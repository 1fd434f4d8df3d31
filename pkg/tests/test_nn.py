"""Layer semantics, finite-difference gradient checks, Adam, SWA."""

import numpy as np
import pytest

from pafforge.errors import ConfigError, DataError
from pafforge.nn import (
    Adam,
    Checkpoint,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2x2,
    ModelGraph,
    PafActivation,
    ReLU,
    TrainConfig,
    adam_step,
    build_model,
    evaluate,
    forward,
    pretrain,
    softmax_cross_entropy,
    swa_average,
)
from pafforge.scaling import ScaleMode

STAGES_SMALL = [[1.2, -0.3], [0.9, -0.2, 0.05]]


def loss_of(model, X, y):
    logits = model.forward(X, train=False)
    loss, _ = softmax_cross_entropy(logits, y)
    return loss


def numeric_grads(model, X, y, eps=1e-4):
    grads = {}
    for key, p in model.parameters().items():
        g = np.zeros_like(p)
        flat_p, flat_g = p.ravel(), g.ravel()
        for i in range(p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            lp = loss_of(model, X, y)
            flat_p[i] = orig - eps
            lm = loss_of(model, X, y)
            flat_p[i] = orig
            flat_g[i] = (lp - lm) / (2 * eps)
        grads[key] = g
    return grads


def analytic_grads(model, X, y):
    logits = model.forward(X, train=False)
    _, dlogits = softmax_cross_entropy(logits, y)
    model.backward(dlogits)
    return model.gradients()


def max_rel_err(analytic, numeric):
    worst = 0.0
    for key in analytic:
        a, n = analytic[key], numeric[key]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestForwardBasics:
    def test_identity_linear(self):
        layer = Linear(3, 3)
        layer.W = np.eye(3)
        layer.b = np.zeros(3)
        model = ModelGraph([layer])
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(model.forward(x), x)

    def test_maxpool_window(self):
        model = ModelGraph([MaxPool2x2()])
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert model.forward(x)[0, 0, 0, 0] == 4.0

    def test_maxpool_needs_even_dims(self):
        with pytest.raises(DataError):
            ModelGraph([MaxPool2x2()]).forward(np.zeros((1, 1, 3, 4)))

    def test_eval_ignores_dropout(self):
        model = ModelGraph([Dropout(0.5)])
        x = np.arange(12.0).reshape(3, 4)
        out1 = model.forward(x, train=False, dropout_on=True)
        out2 = model.forward(x, train=False, dropout_on=True)
        np.testing.assert_array_equal(out1, out2)
        np.testing.assert_array_equal(out1, x)

    def test_train_dropout_masks(self):
        model = ModelGraph([Dropout(0.5)])
        x = np.ones((4, 100))
        rng = np.random.default_rng(0)
        out = model.forward(x, train=True, dropout_on=True, rng=rng)
        assert set(np.unique(out)) == {0.0, 2.0}

    def test_taps_expose_nonpoly_inputs(self):
        model = build_model(
            [
                {"kind": "linear", "in_features": 2, "out_features": 2},
                {"kind": "relu"},
                {"kind": "linear", "in_features": 2, "out_features": 2},
            ],
            seed=0,
            auto_dropout=False,
        )
        x = np.array([[0.5, -0.5]])
        logits, taps = forward(model, x, phase="eval")
        assert len(taps) == 1
        pos, arr = taps[0]
        assert pos == 1
        np.testing.assert_array_equal(arr, model.layers[0].forward(x, None))

    def test_shape_mismatch_raises(self):
        model = ModelGraph([Linear(3, 2)])
        with pytest.raises(DataError):
            model.forward(np.zeros((1, 4)))


class TestGradients:
    def test_single_stage_paf_coefficient_grad(self):
        # relu_paf with q(x) = c1*x at x=2: d(out)/dc1 = x^2/2 = 2
        layer = PafActivation([[0.7]], kind="relu",
                              scale_mode=ScaleMode(variant="static", scale=1.0))
        model = ModelGraph([layer])
        x = np.array([[2.0]])
        model.forward(x)
        model.backward(np.ones_like(x))
        assert model.gradients()["0.stage0"][0] == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_mlp_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        model = build_model(
            [
                {"kind": "linear", "in_features": 4, "out_features": 6},
                {"kind": "relu"},
                {"kind": "linear", "in_features": 6, "out_features": 3},
            ],
            seed=seed,
            auto_dropout=False,
        )
        X = rng.normal(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        assert max_rel_err(analytic_grads(model, X, y),
                           numeric_grads(model, X, y)) < 1e-4

    @pytest.mark.parametrize("seed", [0, 1])
    def test_cnn_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        model = build_model(
            [
                {"kind": "conv2d", "in_channels": 2, "out_channels": 3},
                {"kind": "relu"},
                {"kind": "maxpool2x2"},
                {"kind": "flatten"},
                {"kind": "linear", "in_features": 12, "out_features": 3},
            ],
            seed=seed,
            auto_dropout=False,
        )
        X = rng.normal(size=(3, 2, 4, 4))
        y = rng.integers(0, 3, size=3)
        assert max_rel_err(analytic_grads(model, X, y),
                           numeric_grads(model, X, y)) < 1e-4

    @pytest.mark.parametrize("seed", [0, 1])
    def test_paf_net_gradcheck_static_scale(self, seed):
        rng = np.random.default_rng(seed)
        model = build_model(
            [
                {"kind": "conv2d", "in_channels": 2, "out_channels": 2},
                {"kind": "flatten"},
                {"kind": "linear", "in_features": 32, "out_features": 3},
            ],
            seed=seed,
            auto_dropout=False,
        )
        model.layers.insert(
            1,
            PafActivation(STAGES_SMALL, kind="relu",
                          scale_mode=ScaleMode(variant="static", scale=2.0)),
        )
        model.layers.insert(
            2,
            PafActivation(STAGES_SMALL, kind="maxpool",
                          scale_mode=ScaleMode(variant="static", scale=2.0)),
        )
        # flatten now sees pooled 2x2x... -> adjust the linear layer input
        model.layers[-1] = Linear(8, 3, np.random.default_rng(seed))
        X = rng.normal(size=(3, 2, 4, 4))
        y = rng.integers(0, 3, size=3)
        assert max_rel_err(analytic_grads(model, X, y),
                           numeric_grads(model, X, y)) < 1e-4

    def test_paf_coefficients_gradcheck_dynamic_scale(self):
        # PAF first: its input (hence the per-batch dynamic scale) is fixed,
        # matching the treat-scale-as-constant convention.
        rng = np.random.default_rng(3)
        model = ModelGraph([
            PafActivation(STAGES_SMALL, kind="relu", scale_mode=ScaleMode()),
            Linear(4, 2, rng),
        ])
        X = rng.normal(size=(6, 4))
        y = rng.integers(0, 2, size=6)
        assert max_rel_err(analytic_grads(model, X, y),
                           numeric_grads(model, X, y)) < 1e-4

    def test_frozen_group_grads_zero_filled(self):
        rng = np.random.default_rng(0)
        model = ModelGraph([
            PafActivation(STAGES_SMALL, kind="relu",
                          scale_mode=ScaleMode(variant="static", scale=1.0)),
            Linear(3, 2, rng),
        ])
        X = rng.normal(size=(4, 3))
        y = rng.integers(0, 2, size=4)
        logits = model.forward(X)
        _, dlogits = softmax_cross_entropy(logits, y)
        model.backward(dlogits)
        grads = model.gradients(trainable_groups={"other"})
        assert np.all(grads["0.stage0"] == 0.0)
        assert np.all(grads["0.stage1"] == 0.0)
        assert np.any(grads["1.W"] != 0.0)


class TestAdam:
    def test_zero_grad_zero_wd_is_noop(self):
        cfg = TrainConfig(wd_paf=0.0, wd_other=0.0)
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, cfg, "other")
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_magnitude(self):
        cfg = TrainConfig(wd_paf=0.0, wd_other=0.0)
        p = {"w": np.array([0.5])}
        adam_step(p, {"w": np.array([0.1])}, cfg, "paf")
        assert p["w"][0] == pytest.approx(0.5 - 1e-4, abs=1e-8)

    def test_group_rates(self):
        cfg = TrainConfig()
        assert cfg.lr("paf") == 1e-4
        assert cfg.lr("other") == 1e-5
        assert cfg.weight_decay("paf") == 0.01
        assert cfg.weight_decay("other") == 0.1

    def test_decoupled_weight_decay(self):
        cfg = TrainConfig(wd_other=0.5)
        p = {"w": np.array([2.0])}
        adam_step(p, {"w": np.array([0.0])}, cfg, "other")
        # zero gradient: only the decay term moves the weight
        assert p["w"][0] == pytest.approx(2.0 - cfg.lr_other * 0.5 * 2.0)

    def test_optimizer_respects_scope(self):
        rng = np.random.default_rng(0)
        model = ModelGraph([Linear(2, 2, rng), ReLU(), Linear(2, 2, rng)])
        X = rng.normal(size=(4, 2))
        y = rng.integers(0, 2, size=4)
        logits = model.forward(X)
        _, dlogits = softmax_cross_entropy(logits, y)
        model.backward(dlogits)
        before = {k: v.copy() for k, v in model.parameters().items()}
        Adam(TrainConfig()).step(model, {"other"}, scope_positions={0})
        after = model.parameters()
        assert not np.array_equal(before["0.W"], after["0.W"])
        np.testing.assert_array_equal(before["2.W"], after["2.W"])


class TestSwa:
    def _ckpt(self, value, extra=0.0):
        return Checkpoint(
            state={"params": {"0.W": np.array([value, value + extra])},
                   "scales": {}},
            epoch=0,
        )

    def test_identical_checkpoints(self):
        out = swa_average([self._ckpt(1.5), self._ckpt(1.5)])
        np.testing.assert_array_equal(out.state["params"]["0.W"], [1.5, 1.5])

    def test_mean_of_two(self):
        out = swa_average([self._ckpt(0.0), self._ckpt(2.0)])
        np.testing.assert_array_equal(out.state["params"]["0.W"], [1.0, 1.0])

    def test_order_independent(self):
        a = [self._ckpt(0.0), self._ckpt(1.0), self._ckpt(5.0)]
        fwd = swa_average(a).state["params"]["0.W"]
        rev = swa_average(list(reversed(a))).state["params"]["0.W"]
        np.testing.assert_array_equal(fwd, rev)

    def test_singleton_identity(self):
        out = swa_average([self._ckpt(3.25)])
        np.testing.assert_array_equal(out.state["params"]["0.W"], [3.25, 3.25])

    def test_structural_mismatch(self):
        bad = Checkpoint(state={"params": {"1.W": np.zeros(2)}, "scales": {}})
        with pytest.raises(DataError):
            swa_average([self._ckpt(0.0), bad])


class TestEvaluate:
    def test_perfect_model(self):
        layer = Linear(2, 2)
        layer.W = np.eye(2) * 10
        layer.b = np.zeros(2)
        model = ModelGraph([layer])
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.1]])
        y = np.array([0, 1, 0])
        acc, loss = evaluate(model, (X, y))
        assert acc == 1.0
        assert loss < 0.01

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        model = build_model(
            [{"kind": "linear", "in_features": 3, "out_features": 2}], seed=1
        )
        ds = (rng.normal(size=(50, 3)), rng.integers(0, 2, size=50))
        assert evaluate(model, ds) == evaluate(model, ds)

    def test_empty_rejected(self):
        model = ModelGraph([Linear(2, 2)])
        with pytest.raises(DataError):
            evaluate(model, (np.zeros((0, 2)), np.zeros(0, dtype=int)))


class TestExactSignEquivalence:
    def test_relu_replacement_bit_equal(self):
        rng = np.random.default_rng(2)
        specs = [
            {"kind": "linear", "in_features": 4, "out_features": 8},
            {"kind": "relu"},
            {"kind": "linear", "in_features": 8, "out_features": 3},
        ]
        model = build_model(specs, seed=7, auto_dropout=False)
        replaced = build_model(specs, seed=7, auto_dropout=False)
        replaced.layers[1] = PafActivation([], kind="relu", exact_sign=True)
        X = rng.normal(size=(20, 4))
        assert np.max(np.abs(model.forward(X) - replaced.forward(X))) <= 1e-12

    def test_maxpool_replacement_bit_equal(self):
        rng = np.random.default_rng(4)
        model = ModelGraph([MaxPool2x2()])
        replaced = ModelGraph([PafActivation([], kind="maxpool", exact_sign=True)])
        X = rng.normal(size=(5, 3, 6, 6))
        np.testing.assert_array_equal(model.forward(X), replaced.forward(X))


class TestCheckpointAndDeterminism:
    def _toy(self, seed=0):
        return build_model(
            [
                {"kind": "linear", "in_features": 3, "out_features": 8},
                {"kind": "relu"},
                {"kind": "linear", "in_features": 8, "out_features": 2},
            ],
            seed=seed,
        )

    def test_checkpoint_roundtrip(self, tmp_path):
        model = self._toy()
        ck = Checkpoint(model.state_dict(), epoch=3, val_acc=0.75)
        ck.save(tmp_path / "ck.json")
        loaded = Checkpoint.load(tmp_path / "ck.json")
        assert loaded.epoch == 3 and loaded.val_acc == 0.75
        other = self._toy(seed=9)
        other.load_state_dict(loaded.state)
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, other.parameters()[k])

    def test_structure_mismatch_rejected(self):
        model = self._toy()
        wrong = build_model(
            [{"kind": "linear", "in_features": 3, "out_features": 2}], seed=0
        )
        with pytest.raises(DataError):
            wrong.load_state_dict(model.state_dict())

    def test_training_trajectory_bit_identical(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(64, 3))
        y = rng.integers(0, 2, size=64)
        datasets = ((X[:48], y[:48]), (X[48:], y[48:]))
        cfg = TrainConfig(pretrain_epochs=3, batch_size=16, seed=5)
        m1, m2 = self._toy(seed=5), self._toy(seed=5)
        pretrain(m1, datasets, cfg)
        pretrain(m2, datasets, cfg)
        for k, v in m1.parameters().items():
            np.testing.assert_array_equal(v, m2.parameters()[k])

    def test_batchnorm_tracking_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(batchnorm_tracking=True)
