"""Dynamic/static scaling behavior and the scale-unscale identity."""

import numpy as np
import pytest

from pafforge.catalog import load_catalog
from pafforge.errors import ConfigError, DataError
from pafforge.paf import EXACT_SIGN
from pafforge.scaling import (
    ScaleMode,
    dynamic_scale,
    freeze_static,
    paf_activation,
    update_running_max,
)

ALPHA7_RELU_AT_1 = 0.9930047001024578


class TestDynamicScale:
    def test_basic(self):
        scaled, scale = dynamic_scale([-2.0, 0.5, 1.0])
        assert scale == 2.0
        assert np.allclose(scaled, [-1.0, 0.25, 0.5])

    def test_all_zero_falls_back_to_one(self):
        scaled, scale = dynamic_scale([0.0, 0.0])
        assert scale == 1.0
        assert np.array_equal(scaled, [0.0, 0.0])

    def test_unit_batch_unchanged(self):
        batch = np.array([0.3, -1.0, 0.7])
        scaled, scale = dynamic_scale(batch)
        assert scale == 1.0
        assert np.array_equal(scaled, batch)

    def test_always_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            batch = rng.normal(scale=rng.uniform(0.1, 50), size=64)
            scaled, _ = dynamic_scale(batch)
            assert np.max(np.abs(scaled)) <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            dynamic_scale([])


class TestRunningMax:
    def test_monotone(self):
        mode = ScaleMode()
        update_running_max(mode, [3.0, -1.0])
        update_running_max(mode, [5.0])
        assert mode.running_max == 5.0
        update_running_max(mode, [3.0])
        assert mode.running_max == 5.0

    def test_zero_batch_observes_zero(self):
        mode = ScaleMode()
        update_running_max(mode, [0.0])
        assert mode.running_max == 0.0
        assert mode.observed

    def test_freeze(self):
        mode = ScaleMode()
        update_running_max(mode, [5.0])
        frozen = freeze_static(mode)
        assert frozen.variant == "static"
        assert frozen.scale == 5.0

    def test_freeze_without_observation_rejected(self):
        with pytest.raises(ConfigError):
            freeze_static(ScaleMode())
        mode = ScaleMode()
        update_running_max(mode, [0.0])
        with pytest.raises(ConfigError):
            freeze_static(mode)

    def test_post_freeze_updates_rejected(self):
        mode = ScaleMode()
        update_running_max(mode, [2.0])
        frozen = freeze_static(mode)
        with pytest.raises(ConfigError):
            update_running_max(frozen, [9.0])

    def test_static_needs_positive_scale(self):
        with pytest.raises(ConfigError):
            ScaleMode(variant="static", scale=0.0)


class TestPafActivation:
    def test_exact_sign_static_scale(self):
        mode = ScaleMode(variant="static", scale=2.0)
        out = paf_activation(EXACT_SIGN, np.array([1.0]), mode)
        assert out[0] == 1.0
        out = paf_activation(EXACT_SIGN, np.array([-3.0]), mode)
        assert out[0] == 0.0

    @pytest.mark.parametrize("scale", [0.5, 1.0, 7.0, 100.0])
    def test_scale_unscale_identity_exact(self, scale):
        rng = np.random.default_rng(int(scale * 10))
        x = rng.normal(scale=3.0, size=2000)
        mode = ScaleMode(variant="static", scale=scale)
        out = paf_activation(EXACT_SIGN, x, mode)
        assert np.array_equal(out, np.maximum(x, 0.0))

    def test_alpha7_at_scale_value(self):
        paf = load_catalog().get("alpha7")
        for s in (2.0, 5.0):
            mode = ScaleMode(variant="static", scale=s)
            out = paf_activation(paf, np.array([s]), mode)
            assert out[0] == pytest.approx(s * ALPHA7_RELU_AT_1, rel=1e-12)

    def test_static_is_value_independent(self):
        mode = ScaleMode(variant="static", scale=3.0)
        assert mode.resolve(np.array([100.0])) == 3.0
        assert mode.resolve(np.array([1e-6])) == 3.0

    def test_dynamic_uses_batch(self):
        mode = ScaleMode()
        assert mode.resolve(np.array([4.0, -8.0])) == 8.0
