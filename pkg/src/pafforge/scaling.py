"""Input scaling for PAF activations.

Dynamic scaling normalizes each batch by its own max-abs value during
training, keeping PAF inputs inside [-1, 1].  Static scaling freezes the
running maximum observed in training so deployed inference never performs
a value-dependent operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .paf import EXACT_SIGN, eval_composite

__all__ = [
    "ScaleMode",
    "dynamic_scale",
    "update_running_max",
    "freeze_static",
    "paf_activation",
]

DYNAMIC = "dynamic"
STATIC = "static"


@dataclass
class ScaleMode:
    """Per-layer scaling state.

    variant "dynamic": the scale is recomputed from every batch and
    running_max accumulates observations; "static": scale is a frozen
    positive constant and updates are rejected.
    """

    variant: str = DYNAMIC
    scale: float | None = None
    running_max: float = 0.0
    observed: bool = field(default=False)

    def __post_init__(self):
        if self.variant not in (DYNAMIC, STATIC):
            raise ConfigError(f"unknown scale variant {self.variant!r}")
        if self.variant == STATIC:
            if self.scale is None or not self.scale > 0:
                raise ConfigError("static scale must be a positive real")

    @property
    def frozen(self) -> bool:
        return self.variant == STATIC

    def resolve(self, batch) -> float:
        """Scale to apply to the given batch under this mode."""
        if self.variant == STATIC:
            if not self.scale > 0:
                raise ConfigError("static scale must be positive")
            return float(self.scale)
        return _batch_scale(batch)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "scale": self.scale,
            "running_max": self.running_max,
            "observed": self.observed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleMode":
        return cls(
            variant=d["variant"],
            scale=d.get("scale"),
            running_max=float(d.get("running_max", 0.0)),
            observed=bool(d.get("observed", False)),
        )


def _batch_scale(batch) -> float:
    arr = np.asarray(batch, dtype=float)
    if arr.size == 0:
        raise DataError("cannot scale an empty batch")
    m = float(np.max(np.abs(arr)))
    return m if m > 0 else 1.0  # all-zero batch: identity scale


def dynamic_scale(batch):
    """Scale a batch into [-1, 1] by its max-abs value (1 if all zeros)."""
    arr = np.asarray(batch, dtype=float)
    scale = _batch_scale(arr)
    return arr / scale, scale


def update_running_max(mode: ScaleMode, batch) -> ScaleMode:
    """Fold a training batch's max-abs value into the running maximum."""
    if mode.frozen:
        raise ConfigError("scale is frozen; running-max updates are rejected")
    arr = np.asarray(batch, dtype=float)
    if arr.size == 0:
        raise DataError("cannot update running max from an empty batch")
    mode.running_max = max(mode.running_max, float(np.max(np.abs(arr))))
    mode.observed = True
    return mode


def freeze_static(mode: ScaleMode) -> ScaleMode:
    """Fix the scale to the training running maximum for deployment."""
    if mode.frozen:
        raise ConfigError("scale is already frozen")
    if not mode.observed or not mode.running_max > 0:
        raise ConfigError(
            "cannot freeze: running max was never observed (or is zero)"
        )
    return ScaleMode(
        variant=STATIC,
        scale=mode.running_max,
        running_max=mode.running_max,
        observed=True,
    )


def paf_activation(paf, batch, mode: ScaleMode, layer: int | None = None):
    """scale * relu_paf(x / scale), fused so the identity is exact.

    Computed as (x + x * s(x/scale)) / 2, which is algebraically the same
    as rescaling the scaled activation but avoids the (x/s)*s round trip;
    with the exact sign this equals ReLU(x) bit-for-bit for any scale.
    """
    arr = np.asarray(batch, dtype=float)
    scale = mode.resolve(arr)
    u = arr / scale
    if paf is EXACT_SIGN or paf is None:
        s = np.sign(u)
    else:
        s = eval_composite(paf, u, layer)
    return (arr + arr * s) / 2
