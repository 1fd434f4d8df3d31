"""Coefficient-tuning dataset construction, profiling, and tuning."""

import numpy as np
import pytest

from pafforge.catalog import load_catalog
from pafforge.ct import (
    CtConfig,
    CtDataset,
    CtLayerData,
    collect_ct_dataset,
    profile,
    split_ct,
    tune_coefficients,
)
from pafforge.errors import ConfigError, DataError, DivergenceError
from pafforge.nn import build_model
from pafforge.paf import CompositePaf


def two_relu_mlp(width=8, seed=0):
    return build_model(
        [
            {"kind": "linear", "in_features": 4, "out_features": width},
            {"kind": "relu"},
            {"kind": "linear", "in_features": width, "out_features": width},
            {"kind": "relu"},
            {"kind": "linear", "in_features": width, "out_features": 3},
        ],
        seed=seed,
        auto_dropout=False,
    )


class TestCollect:
    def test_shapes(self):
        model = two_relu_mlp(width=8)
        X = np.random.default_rng(0).normal(size=(10, 4))
        ds = collect_ct_dataset(model, X, seed=1)
        assert len(ds.layers) == 2
        for layer in ds.layers:
            assert layer.inputs.size == 80  # 10 samples x width 8

    def test_references_are_exact_relu(self):
        model = two_relu_mlp()
        X = np.random.default_rng(1).normal(size=(6, 4))
        ds = collect_ct_dataset(model, X, seed=0)
        for layer in ds.layers:
            np.testing.assert_array_equal(layer.refs, np.maximum(layer.inputs, 0.0))

    def test_deterministic(self):
        model = two_relu_mlp()
        X = np.random.default_rng(2).normal(size=(50, 4))
        a = collect_ct_dataset(model, X, seed=3, max_samples=100)
        b = collect_ct_dataset(model, X, seed=3, max_samples=100)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.inputs, lb.inputs)

    def test_without_nonpoly_layers(self):
        model = build_model(
            [{"kind": "linear", "in_features": 2, "out_features": 2}], seed=0
        )
        with pytest.raises(DataError):
            collect_ct_dataset(model, np.zeros((3, 2)))

    def test_positions_strictly_increase(self):
        with pytest.raises(DataError):
            CtDataset(
                layers=(
                    CtLayerData(4, np.ones(2), np.ones(2)),
                    CtLayerData(1, np.ones(2), np.ones(2)),
                )
            )

    def test_save_load_roundtrip(self, tmp_path):
        model = two_relu_mlp()
        X = np.random.default_rng(4).normal(size=(5, 4))
        ds = collect_ct_dataset(model, X)
        ds.save(tmp_path / "ct.json")
        back = CtDataset.load(tmp_path / "ct.json")
        for la, lb in zip(ds.layers, back.layers):
            assert la.layer_pos == lb.layer_pos
            np.testing.assert_array_equal(la.inputs, lb.inputs)


class TestSplit:
    def _ds(self, n=100):
        vals = np.linspace(-1, 1, n)
        return CtDataset(layers=(CtLayerData(1, vals, np.maximum(vals, 0)),))

    def test_ninety_ten(self):
        train, val = split_ct(self._ds(100), ratio=0.9, seed=0)
        assert train.layers[0].inputs.size == 90
        assert val.layers[0].inputs.size == 10

    def test_disjoint(self):
        train, val = split_ct(self._ds(60), ratio=0.9, seed=1)
        overlap = set(train.layers[0].inputs) & set(val.layers[0].inputs)
        assert not overlap

    def test_same_seed_same_split(self):
        a_tr, a_va = split_ct(self._ds(40), seed=9)
        b_tr, b_va = split_ct(self._ds(40), seed=9)
        np.testing.assert_array_equal(a_tr.layers[0].inputs, b_tr.layers[0].inputs)
        np.testing.assert_array_equal(a_va.layers[0].inputs, b_va.layers[0].inputs)

    def test_bad_ratio(self):
        with pytest.raises(ConfigError):
            split_ct(self._ds(10), ratio=1.5)

    def test_too_few_samples(self):
        ds = CtDataset(layers=(CtLayerData(0, np.ones(1), np.ones(1)),))
        with pytest.raises(DataError):
            split_ct(ds)


class TestProfile:
    def test_counts_sum(self):
        samples = np.random.default_rng(0).uniform(-1, 1, size=1000)
        prof = profile(samples, bins=10)
        assert prof.counts.sum() == 1000
        assert len(prof.counts) == 10

    def test_single_sample(self):
        prof = profile([3.5])
        assert prof.min == prof.max == 3.5
        assert prof.max_abs == 3.5
        assert prof.counts.sum() == 1

    def test_max_abs(self):
        prof = profile([-4.0, 2.0])
        assert prof.max_abs == 4.0

    def test_default_bins(self):
        prof = profile(np.linspace(0, 1, 500))
        assert len(prof.counts) == 64

    def test_empty(self):
        with pytest.raises(DataError):
            profile([])


def plain_gd_oracle(c0, u, target, lr, epochs):
    """Scalar-case oracle: plain gradient descent on the same objective."""
    c = c0
    for _ in range(epochs):
        pred = (u + c * u * u) / 2  # single degree-1 stage: q(u) = c*u
        resid = pred - target
        grad = 2 * resid * (u * u / 2)
        c -= lr * grad
    pred = (u + c * u * u) / 2
    return (pred - target) ** 2


class TestTune:
    def test_single_record_converges(self):
        # oracle run (frozen logic above): lr=1.0 reaches ~1e-25 in 40 epochs
        assert plain_gd_oracle(0.5, 1.0, 1.0, lr=1.0, epochs=40) < 1e-6
        paf = CompositePaf("toy", ((0.5,),))
        data = CtLayerData(0, np.array([0.5]), np.array([0.5]))
        cfg = CtConfig(epochs=40, lr=1.0)
        tuned, curve = tune_coefficients(paf, 0, data, data, cfg)
        assert len(curve) == 40
        assert min(curve) < 1e-6

    def test_self_generated_references_are_fixed_point(self):
        paf = load_catalog().get("f1og2")
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, size=64)
        scale = np.max(np.abs(x))
        u = x / scale
        q = u.copy()
        for stage in paf.stages_for(0):
            q = sum(c * q ** (2 * k + 1) for k, c in enumerate(stage.coefficients))
        refs = scale * (u + u * q) / 2
        data = CtLayerData(0, x, refs)
        tuned, curve = tune_coefficients(paf, 0, data, data, CtConfig(epochs=5))
        assert curve[0] == 0.0
        for before, after in zip(paf.stages_for(0), tuned.stages_for(0)):
            assert before.coefficients == after.coefficients

    def test_default_epochs_is_forty(self):
        assert CtConfig().epochs == 40
        assert CtConfig().split_ratio == 0.9

    def test_best_so_far_non_increasing(self):
        paf = load_catalog().get("f1^2og1^2")
        rng = np.random.default_rng(7)
        x = rng.normal(size=200)
        data = CtLayerData(0, x, np.maximum(x, 0))
        tr = CtLayerData(0, x[:180], np.maximum(x[:180], 0))
        va = CtLayerData(0, x[180:], np.maximum(x[180:], 0))
        _, curve = tune_coefficients(paf, 0, tr, va, CtConfig(epochs=30))
        best = np.minimum.accumulate(curve)
        assert np.all(np.diff(best) <= 0)

    def test_per_layer_isolation(self):
        paf = load_catalog().get("f1og2")
        rng = np.random.default_rng(3)
        x = rng.normal(size=50)
        tr = CtLayerData(0, x[:40], np.maximum(x[:40], 0))
        va = CtLayerData(0, x[40:], np.maximum(x[40:], 0))
        tuned, _ = tune_coefficients(paf, 2, tr, va, CtConfig(epochs=10))
        for layer in range(17):
            if layer == 2:
                continue
            assert tuned.per_layer[layer] == paf.per_layer[layer]

    def test_matches_linear_least_squares(self):
        # single stage -> the prediction is linear in the coefficients
        rng = np.random.default_rng(11)
        x = rng.uniform(-1, 1, size=60)
        refs = np.maximum(x, 0)
        scale = np.max(np.abs(x))
        u, t = x / scale, refs / scale
        A = np.stack([u ** 2 / 2, u ** 4 / 2], axis=1)
        coef, *_ = np.linalg.lstsq(A, t - u / 2, rcond=None)
        optimum = float(np.mean((A @ coef - (t - u / 2)) ** 2))

        paf = CompositePaf("single", ((1.0, 0.0),))
        data = CtLayerData(0, x, refs)
        cfg = CtConfig(epochs=4000, lr=0.8, patience=100)
        _, curve = tune_coefficients(paf, 0, data, data, cfg)
        assert min(curve) - optimum < 1e-6

    def test_divergence_carries_state(self):
        paf = CompositePaf("unstable", ((2.0, 2.0),))
        x = np.linspace(-3, 3, 32)
        data = CtLayerData(0, x, np.maximum(x, 0))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as info:
                tune_coefficients(paf, 0, data, data, CtConfig(epochs=50, lr=1e9))
        assert info.value.last_state is not None

    def test_epoch_trend_recorded(self):
        # convergence-speed echo: recorded for inspection, not asserted
        paf = load_catalog().get("f1og2")
        rng = np.random.default_rng(5)
        x = rng.normal(size=120)
        tr = CtLayerData(0, x[:100], np.maximum(x[:100], 0))
        va = CtLayerData(0, x[100:], np.maximum(x[100:], 0))
        gaps = {}
        for epochs in (10, 40):
            _, curve = tune_coefficients(paf, 0, tr, va, CtConfig(epochs=epochs))
            gaps[epochs] = curve[-1] - min(curve)
        assert all(np.isfinite(list(gaps.values())))
