"""Coefficient Tuning: profile activations and refit PAF coefficients.

The tuning dataset pairs each non-polynomial layer's captured inputs with
exact ReLU reference outputs.  Tuning runs full-batch gradient descent on
the mean squared error between the PAF-reconstructed ReLU and the
reference, in dynamically scaled coordinates, one layer at a time; other
layers' stored coefficients are never touched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .nn import ModelGraph
from .paf import CompositePaf, composite_backward, composite_forward

__all__ = [
    "CtLayerData",
    "CtDataset",
    "ActivationProfile",
    "CtConfig",
    "collect_ct_dataset",
    "split_ct",
    "profile",
    "tune_coefficients",
]


@dataclass(frozen=True)
class CtLayerData:
    """Captured inputs of one non-polynomial layer with ReLU references."""

    layer_pos: int
    inputs: np.ndarray
    refs: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float).ravel()
        refs = np.asarray(self.refs, dtype=float).ravel()
        if inputs.shape != refs.shape:
            raise DataError("inputs and references must have equal length")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "refs", refs)


@dataclass(frozen=True)
class CtDataset:
    layers: tuple[CtLayerData, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        positions = [l.layer_pos for l in layers]
        if positions != sorted(positions) or len(set(positions)) != len(positions):
            raise DataError("layer positions must strictly increase")
        object.__setattr__(self, "layers", layers)

    def layer(self, ordinal: int) -> CtLayerData:
        return self.layers[ordinal]

    def save(self, path):
        doc = {
            "schema_version": 1,
            "layers": [
                {
                    "layer": l.layer_pos,
                    "inputs": l.inputs.tolist(),
                    "refs": l.refs.tolist(),
                }
                for l in self.layers
            ],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "CtDataset":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read CT dataset {path}: {exc}") from exc
        return cls(
            layers=tuple(
                CtLayerData(int(l["layer"]), np.array(l["inputs"]), np.array(l["refs"]))
                for l in doc["layers"]
            )
        )


@dataclass(frozen=True)
class ActivationProfile:
    """Equal-width histogram plus range statistics of one layer's inputs."""

    bin_edges: np.ndarray
    counts: np.ndarray
    min: float
    max: float
    max_abs: float


@dataclass(frozen=True)
class CtConfig:
    """Coefficient tuning hyperparameters.

    The learning rate follows a reduce-on-plateau schedule on validation
    loss: after ``patience`` epochs without improvement the rate is
    multiplied by ``decay``.
    """

    epochs: int = 40
    lr: float = 1e-2
    patience: int = 5
    decay: float = 0.5
    split_ratio: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split ratio must lie in (0, 1)")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def collect_ct_dataset(model: ModelGraph, data, seed=0, max_samples=None) -> CtDataset:
    """Capture every remaining non-polynomial layer's inputs from a model.

    ``data`` is the feature tensor (labels are irrelevant here).  References
    are exact ReLU outputs of the captured inputs.  Deterministic for a
    fixed seed: the optional subsampling uses its own generator.
    """
    X = np.asarray(data, dtype=float)
    if len(X) == 0:
        raise DataError("CT collection needs a non-empty dataset")
    if not model.nonpoly_positions():
        raise DataError("model has no non-polynomial layers left to profile")
    _, taps = model.forward(X, train=False, collect_taps=True)
    rng = np.random.default_rng(seed)
    layers = []
    for pos, arr in taps:
        flat = arr.ravel()
        if max_samples is not None and flat.size > max_samples:
            idx = rng.choice(flat.size, size=max_samples, replace=False)
            idx.sort()
            flat = flat[idx]
        layers.append(CtLayerData(pos, flat, np.maximum(flat, 0.0)))
    return CtDataset(layers=tuple(layers))


def split_ct(ds: CtDataset, ratio: float = 0.9, seed: int = 0):
    """Per-layer random disjoint split; |train| = round(ratio * n)."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("split ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_layers, val_layers = [], []
    for layer in ds.layers:
        n = layer.inputs.size
        if n < 2:
            raise DataError(f"layer {layer.layer_pos}: need >= 2 samples to split")
        perm = rng.permutation(n)
        n_train = int(round(ratio * n))
        n_train = min(max(n_train, 1), n - 1)  # both sides stay non-empty
        tr, va = perm[:n_train], perm[n_train:]
        train_layers.append(
            CtLayerData(layer.layer_pos, layer.inputs[tr], layer.refs[tr])
        )
        val_layers.append(
            CtLayerData(layer.layer_pos, layer.inputs[va], layer.refs[va])
        )
    return CtDataset(tuple(train_layers)), CtDataset(tuple(val_layers))


def profile(samples, bins: int = 64) -> ActivationProfile:
    """Equal-width histogram over [min, max] with range statistics."""
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise DataError("cannot profile an empty sample set")
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        edges = np.array([lo, hi])
        counts = np.array([arr.size])
    else:
        counts, edges = np.histogram(arr, bins=bins, range=(lo, hi))
    return ActivationProfile(
        bin_edges=edges,
        counts=counts,
        min=lo,
        max=hi,
        max_abs=max(abs(lo), abs(hi)),
    )


def _scaled_loss_and_grads(stages, u, target, want_grads=True):
    zs = composite_forward(stages, u)
    pred = (u + u * zs[-1]) / 2
    resid = pred - target
    loss = float(np.mean(resid * resid))
    if not want_grads:
        return loss, None
    upstream = resid * u / u.size  # d(mean resid^2)/dq = 2*resid*(u/2)/n
    coeff_grads, _ = composite_backward(stages, zs, upstream)
    return loss, coeff_grads


def tune_coefficients(paf: CompositePaf, layer: int, train: CtLayerData,
                      val: CtLayerData, cfg: CtConfig | None = None):
    """Refit one layer's PAF coefficients against its profiled data.

    Inputs are pre-scaled by dynamic scaling (the train slice's max-abs
    value; references share the same scale so the target stays exact
    ReLU in scaled coordinates).  Returns a new CompositePaf whose
    per-layer table carries the coefficients with the best validation
    loss seen over all epochs, plus the per-epoch validation loss curve.
    """
    cfg = cfg or CtConfig()
    if train.inputs.size == 0 or val.inputs.size == 0:
        raise DataError("tuning needs non-empty train and validation slices")
    stages = [np.array(s.coefficients, dtype=float)
              for s in paf.stages_for(layer)]

    scale = float(np.max(np.abs(train.inputs)))
    if scale <= 0:
        scale = 1.0
    u_tr, t_tr = train.inputs / scale, train.refs / scale
    u_va, t_va = val.inputs / scale, val.refs / scale

    best_loss, _ = _scaled_loss_and_grads(stages, u_va, t_va, want_grads=False)
    best_stages = [s.copy() for s in stages]
    lr = cfg.lr
    stall = 0
    curve = []
    for epoch in range(cfg.epochs):
        loss, grads = _scaled_loss_and_grads(stages, u_tr, t_tr)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"CT diverged at epoch {epoch} (layer {layer})",
                last_state=[s.copy() for s in best_stages],
                epoch=epoch,
            )
        for s, g in zip(stages, grads):
            s -= lr * g
        val_loss, _ = _scaled_loss_and_grads(stages, u_va, t_va, want_grads=False)
        if not np.isfinite(val_loss):
            raise DivergenceError(
                f"CT diverged at epoch {epoch} (layer {layer})",
                last_state=[s.copy() for s in best_stages],
                epoch=epoch,
            )
        curve.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_stages = [s.copy() for s in stages]
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                lr *= cfg.decay
                stall = 0
    tuned = paf.with_layer_coefficients(layer, [s.tolist() for s in best_stages])
    return tuned, curve
