"""Minimal numpy neural-network substrate for desk-scale experiments.

Layers cache what their backward pass needs, so training is strictly
forward-then-backward on the same batch.  PAF activation layers carry
their own trainable stage coefficients (parameter group "paf"); every
other trainable tensor belongs to group "other".  Dynamic input scales
are treated as constants of the batch when differentiating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .paf import composite_backward, composite_forward, odd_derivative
from .scaling import ScaleMode, update_running_max

__all__ = [
    "TrainConfig",
    "Linear",
    "Conv2d",
    "ReLU",
    "MaxPool2x2",
    "PafActivation",
    "Dropout",
    "Flatten",
    "ModelGraph",
    "Checkpoint",
    "build_model",
    "forward",
    "backward",
    "softmax_cross_entropy",
    "adam_step",
    "Adam",
    "swa_average",
    "evaluate",
    "pretrain",
]

PAF_GROUP = "paf"
OTHER_GROUP = "other"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for model fine-tuning and pretraining."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_paf: float = 1e-4
    lr_other: float = 1e-5
    wd_paf: float = 0.01
    wd_other: float = 0.1
    batchnorm_tracking: bool = False
    dropout: bool = False
    dropout_p: float = 0.5
    group_epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    pretrain_lr: float = 1e-2
    pretrain_epochs: int = 40
    pretrain_weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr_paf <= 0 or self.lr_other <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.group_epochs < 1:
            raise ConfigError("group_epochs must be >= 1")
        if self.batchnorm_tracking:
            raise ConfigError("batchnorm is not supported; tracking must stay off")

    def lr(self, group: str) -> float:
        return self.lr_paf if group == PAF_GROUP else self.lr_other

    def weight_decay(self, group: str) -> float:
        return self.wd_paf if group == PAF_GROUP else self.wd_other


@dataclass
class _Ctx:
    train: bool = False
    dropout_on: bool = False
    rng: np.random.Generator | None = None


class Layer:
    """Base layer: stateless unless it declares parameters."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def param_group(self, name: str) -> str:
        return OTHER_GROUP

    def forward(self, x, ctx: _Ctx):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng=None):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        std = math.sqrt(2.0 / in_features)
        self.W = rng.normal(0.0, std, size=(in_features, out_features))
        self.b = np.zeros(out_features)
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, ctx):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DataError(
                f"linear expects (N, {self.in_features}), got {x.shape}"
            )
        self._x = x
        return x @ self.W + self.b

    def backward(self, dy):
        self.grads = {"W": self._x.T @ dy, "b": dy.sum(axis=0)}
        return dy @ self.W.T

    def spec(self):
        return {
            "kind": "linear",
            "in_features": self.in_features,
            "out_features": self.out_features,
        }


class Conv2d(Layer):
    """3x3 convolution, stride 1."""

    def __init__(self, in_channels: int, out_channels: int, padding: int = 1, rng=None):
        if padding not in (0, 1):
            raise ConfigError("conv padding must be 0 or 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        std = math.sqrt(2.0 / (in_channels * 9))
        self.W = rng.normal(0.0, std, size=(out_channels, in_channels, 3, 3))
        self.b = np.zeros(out_channels)
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, ctx):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DataError(
                f"conv expects (N, {self.in_channels}, H, W), got {x.shape}"
            )
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        ho, wo = xp.shape[2] - 2, xp.shape[3] - 2
        if ho < 1 or wo < 1:
            raise DataError(f"input {x.shape} too small for a 3x3 kernel")
        y = np.zeros((x.shape[0], self.out_channels, ho, wo))
        for di in range(3):
            for dj in range(3):
                patch = xp[:, :, di:di + ho, dj:dj + wo]
                y += np.einsum("ncij,oc->noij", patch, self.W[:, :, di, dj])
        self._xp_shape = xp.shape
        self._xp = xp
        return y + self.b[None, :, None, None]

    def backward(self, dy):
        ho, wo = dy.shape[2], dy.shape[3]
        dW = np.zeros_like(self.W)
        dxp = np.zeros(self._xp_shape)
        for di in range(3):
            for dj in range(3):
                patch = self._xp[:, :, di:di + ho, dj:dj + wo]
                dW[:, :, di, dj] = np.einsum("noij,ncij->oc", dy, patch)
                dxp[:, :, di:di + ho, dj:dj + wo] += np.einsum(
                    "noij,oc->ncij", dy, self.W[:, :, di, dj]
                )
        self.grads = {"W": dW, "b": dy.sum(axis=(0, 2, 3))}
        p = self.padding
        return dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp

    def spec(self):
        return {
            "kind": "conv2d",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "padding": self.padding,
        }


class ReLU(Layer):
    def forward(self, x, ctx):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return dy * self._mask

    def spec(self):
        return {"kind": "relu"}


def _pool_windows(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DataError(f"maxpool2x2 needs even spatial dims, got {x.shape}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, h // 2, w // 2, 4)


def _unpool_windows(dwin, shape):
    n, c, h, w = shape
    back = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return back.reshape(n, c, h, w)


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; backward routes to the argmax element."""

    def forward(self, x, ctx):
        self._shape = x.shape
        win = _pool_windows(x)
        self._argmax = np.argmax(win, axis=-1)
        return np.take_along_axis(win, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        dwin = np.zeros(dy.shape + (4,))
        np.put_along_axis(dwin, self._argmax[..., None], dy[..., None], axis=-1)
        return _unpool_windows(dwin, self._shape)

    def spec(self):
        return {"kind": "maxpool2x2"}


class PafActivation(Layer):
    """ReLU or MaxPool replaced by a sign-approximation polynomial.

    kind "relu": y = (x + x*q(x/s))/2 elementwise.
    kind "maxpool": pairwise max tree over each 2x2 window, each node
    ((p+q) + (p-q)*Q((p-q)/s))/2 with the shared layer scale s.
    exact_sign swaps q for the true sign (no trainable coefficients);
    the maxpool variant then short-circuits to the native max, which the
    reconstruction formula only matches up to rounding.
    """

    def __init__(self, stages, kind="relu", scale_mode=None, exact_sign=False,
                 ordinal=0, paf_name=""):
        if kind not in ("relu", "maxpool"):
            raise ConfigError(f"unknown paf activation kind {kind!r}")
        self.kind = kind
        self.exact_sign = bool(exact_sign)
        self.stages = [] if exact_sign else [np.array(s, dtype=float) for s in stages]
        self.scale_mode = scale_mode or ScaleMode()
        self.ordinal = int(ordinal)
        self.paf_name = paf_name
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        return {f"stage{i}": s for i, s in enumerate(self.stages)}

    def param_group(self, name):
        return PAF_GROUP

    def stage_coefficients(self) -> list[list[float]]:
        return [list(map(float, s)) for s in self.stages]

    def _resolve_scale(self, x, ctx):
        if ctx.train and not self.scale_mode.frozen:
            update_running_max(self.scale_mode, x)
        return self.scale_mode.resolve(x)

    def forward(self, x, ctx):
        if self.kind == "relu":
            return self._forward_relu(x, ctx)
        return self._forward_pool(x, ctx)

    def backward(self, dy):
        if self.kind == "relu":
            return self._backward_relu(dy)
        return self._backward_pool(dy)

    # elementwise ReLU replacement
    def _forward_relu(self, x, ctx):
        scale = self._resolve_scale(x, ctx)
        self._x = x
        self._scale = scale
        u = x / scale
        if self.exact_sign:
            self._q = np.sign(u)
            self._zs = None
        else:
            self._zs = composite_forward(self.stages, u)
            self._q = self._zs[-1]
        return (x + x * self._q) / 2

    def _backward_relu(self, dy):
        if self.exact_sign:
            self.grads = {}
            return dy * (1.0 + self._q) / 2
        coeff_grads, g = composite_backward(self.stages, self._zs, dy * self._x / 2)
        self.grads = {f"stage{i}": cg for i, cg in enumerate(coeff_grads)}
        return dy * (1.0 + self._q) / 2 + g / self._scale

    # 2x2 window max tree
    def _node_forward(self, p, q, scale):
        if self.exact_sign:
            take_p = p >= q
            return np.where(take_p, p, q), {"take_p": take_p}
        diff = p - q
        u = diff / scale
        zs = composite_forward(self.stages, u)
        out = ((p + q) + diff * zs[-1]) / 2
        return out, {"diff": diff, "zs": zs, "q": zs[-1]}

    def _node_backward(self, dm, cache, scale, coeff_acc):
        if self.exact_sign:
            take_p = cache["take_p"]
            return np.where(take_p, dm, 0.0), np.where(take_p, 0.0, dm)
        coeff_grads, g = composite_backward(
            self.stages, cache["zs"], dm * cache["diff"] / 2
        )
        for acc, cg in zip(coeff_acc, coeff_grads):
            acc += cg
        qv = cache["q"]
        dp = dm * (1.0 + qv) / 2 + g / scale
        dq = dm * (1.0 - qv) / 2 - g / scale
        return dp, dq

    def _forward_pool(self, x, ctx):
        scale = self._resolve_scale(x, ctx)
        self._scale = scale
        self._shape = x.shape
        win = _pool_windows(x)
        a, b, c, d = (win[..., k] for k in range(4))
        m1, cache1 = self._node_forward(a, b, scale)
        m2, cache2 = self._node_forward(c, d, scale)
        out, cache3 = self._node_forward(m1, m2, scale)
        self._caches = (cache1, cache2, cache3)
        return out

    def _backward_pool(self, dy):
        cache1, cache2, cache3 = self._caches
        coeff_acc = [np.zeros_like(s) for s in self.stages]
        dm1, dm2 = self._node_backward(dy, cache3, self._scale, coeff_acc)
        da, db = self._node_backward(dm1, cache1, self._scale, coeff_acc)
        dc, dd = self._node_backward(dm2, cache2, self._scale, coeff_acc)
        self.grads = {f"stage{i}": cg for i, cg in enumerate(coeff_acc)}
        dwin = np.stack([da, db, dc, dd], axis=-1)
        return _unpool_windows(dwin, self._shape)

    def spec(self):
        return {
            "kind": "paf_activation",
            "paf_kind": self.kind,
            "stage_sizes": [len(s) for s in self.stages],
            "exact_sign": self.exact_sign,
            "ordinal": self.ordinal,
            "paf_name": self.paf_name,
        }


class Dropout(Layer):
    """Inverted dropout; active only in the train phase when engaged."""

    def __init__(self, p: float = 0.5):
        if not 0.0 <= p < 1.0:
            raise ConfigError("dropout probability must be in [0, 1)")
        self.p = p

    def forward(self, x, ctx):
        if not (ctx.train and ctx.dropout_on and self.p > 0):
            self._mask = None
            return x
        if ctx.rng is None:
            raise ConfigError("dropout in train phase needs an rng")
        self._mask = (ctx.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask

    def spec(self):
        return {"kind": "dropout", "p": self.p}


class Flatten(Layer):
    def forward(self, x, ctx):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def spec(self):
        return {"kind": "flatten"}


NONPOLY_KINDS = (ReLU, MaxPool2x2)


class ModelGraph:
    """Ordered layer list with tap collection and parameter bookkeeping."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def nonpoly_count(self) -> int:
        return len(self.nonpoly_positions())

    def nonpoly_positions(self) -> list[int]:
        return [
            i for i, l in enumerate(self.layers) if isinstance(l, NONPOLY_KINDS)
        ]

    def paf_layers(self) -> list[PafActivation]:
        return [l for l in self.layers if isinstance(l, PafActivation)]

    def forward(self, x, *, train=False, dropout_on=False, rng=None,
                collect_taps=False):
        ctx = _Ctx(train=train, dropout_on=dropout_on, rng=rng)
        taps = [] if collect_taps else None
        out = np.asarray(x, dtype=float)
        for pos, layer in enumerate(self.layers):
            if taps is not None and isinstance(layer, NONPOLY_KINDS):
                taps.append((pos, out.copy()))
            out = layer.forward(out, ctx)
        return (out, taps) if collect_taps else out

    def backward(self, dlogits):
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"{i}.{name}"] = arr
        return out

    def param_group(self, key: str) -> str:
        pos, name = key.split(".", 1)
        return self.layers[int(pos)].param_group(name)

    def gradients(self, trainable_groups=None) -> dict[str, np.ndarray]:
        """Gradients keyed like parameters(); frozen groups are zero-filled."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                key = f"{i}.{name}"
                grad = layer.grads.get(name)
                if grad is None:
                    grad = np.zeros_like(arr)
                if trainable_groups is not None and (
                    layer.param_group(name) not in trainable_groups
                ):
                    grad = np.zeros_like(arr)
                out[key] = grad
        return out

    def state_dict(self) -> dict:
        params = {k: v.copy() for k, v in self.parameters().items()}
        scales = {
            str(i): l.scale_mode.to_dict()
            for i, l in enumerate(self.layers)
            if isinstance(l, PafActivation)
        }
        return {"params": params, "scales": scales}

    def load_state_dict(self, state: dict):
        params = self.parameters()
        if set(params) != set(state["params"]):
            raise DataError(
                "checkpoint structure mismatch: parameter keys differ"
            )
        for key, arr in state["params"].items():
            if params[key].shape != np.shape(arr):
                raise DataError(f"checkpoint shape mismatch for {key}")
            params[key][...] = arr
        for pos, mode in state.get("scales", {}).items():
            layer = self.layers[int(pos)]
            if not isinstance(layer, PafActivation):
                raise DataError(f"checkpoint scale entry {pos} is not a PAF layer")
            layer.scale_mode = ScaleMode.from_dict(mode)

    def to_spec(self) -> list[dict]:
        return [l.spec() for l in self.layers]


@dataclass
class Checkpoint:
    """Snapshot of every trainable tensor plus scale states."""

    state: dict
    epoch: int | None = None
    val_acc: float | None = None

    def save(self, path):
        doc = {
            "schema_version": 1,
            "epoch": self.epoch,
            "val_acc": self.val_acc,
            "params": {k: v.tolist() for k, v in self.state["params"].items()},
            "scales": self.state["scales"],
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
        state = {
            "params": {k: np.array(v) for k, v in doc["params"].items()},
            "scales": doc.get("scales", {}),
        }
        return cls(state=state, epoch=doc.get("epoch"), val_acc=doc.get("val_acc"))


def build_model(specs, seed=0, auto_dropout=True, dropout_p=0.5) -> ModelGraph:
    """Build a ModelGraph from layer spec dicts.

    With auto_dropout, a Dropout layer is inserted after each hidden
    activation (ReLU/MaxPool) that is not already followed by one; the
    layers stay inert until the training scheduler engages dropout.
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    specs = list(specs)
    for idx, raw in enumerate(specs):
        kind = raw.get("kind")
        if kind == "linear":
            layers.append(Linear(int(raw["in_features"]), int(raw["out_features"]), rng))
        elif kind == "conv2d":
            layers.append(
                Conv2d(int(raw["in_channels"]), int(raw["out_channels"]),
                       int(raw.get("padding", 1)), rng)
            )
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool2x2":
            layers.append(MaxPool2x2())
        elif kind == "dropout":
            layers.append(Dropout(float(raw.get("p", dropout_p))))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "paf_activation":
            layers.append(
                PafActivation(
                    stages=[np.zeros(n) for n in raw.get("stage_sizes", [])],
                    kind=raw.get("paf_kind", "relu"),
                    exact_sign=bool(raw.get("exact_sign", False)),
                    ordinal=int(raw.get("ordinal", 0)),
                    paf_name=raw.get("paf_name", ""),
                )
            )
        else:
            raise ConfigError(f"unknown layer kind {kind!r} at position {idx}")
        if (
            auto_dropout
            and kind in ("relu", "maxpool2x2")
            and idx + 1 < len(specs)
            and specs[idx + 1].get("kind") != "dropout"
        ):
            layers.append(Dropout(dropout_p))
    return ModelGraph(layers)


def forward(model: ModelGraph, batch, phase: str = "eval", rng=None,
            dropout_on=False):
    """Run the model and expose non-polynomial layer inputs as taps."""
    if phase not in ("train", "eval"):
        raise ConfigError(f"unknown phase {phase!r}")
    logits, taps = model.forward(
        batch, train=(phase == "train"), dropout_on=dropout_on, rng=rng,
        collect_taps=True,
    )
    return logits, taps


def backward(model: ModelGraph, dlogits):
    """Backpropagate loss gradients; every layer stores its parameter grads."""
    return model.backward(dlogits)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy with fused softmax; returns (loss, dlogits)."""
    labels = np.asarray(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def adam_step(params: dict, grads: dict, cfg: TrainConfig, group: str,
              state: dict | None = None) -> dict:
    """One Adam update with decoupled weight decay for a parameter group.

    ``state`` maps param key -> {m, v, t} and is created when absent;
    parameters are updated in place and returned.
    """
    if state is None:
        state = {}
    lr = cfg.lr(group)
    wd = cfg.weight_decay(group)
    for key, p in params.items():
        g = grads[key]
        if np.shape(g) != np.shape(p):
            raise DataError(f"gradient shape mismatch for {key}")
        st = state.setdefault(
            key, {"m": np.zeros_like(p), "v": np.zeros_like(p), "t": 0}
        )
        st["t"] += 1
        st["m"] = cfg.beta1 * st["m"] + (1 - cfg.beta1) * g
        st["v"] = cfg.beta2 * st["v"] + (1 - cfg.beta2) * (g * g)
        mhat = st["m"] / (1 - cfg.beta1 ** st["t"])
        vhat = st["v"] / (1 - cfg.beta2 ** st["t"])
        p -= lr * (mhat / (np.sqrt(vhat) + cfg.eps) + wd * p)
    return params


class Adam:
    """Adam optimizer over a model's parameters, keyed per group."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.state: dict[str, dict] = {}

    def step(self, model: ModelGraph, trainable_groups, scope_positions=None):
        """Update the trainable groups; optionally restrict layer positions."""
        params = model.parameters()
        grads = model.gradients()
        for key in params:
            group = model.param_group(key)
            if group not in trainable_groups:
                continue
            pos = int(key.split(".", 1)[0])
            if scope_positions is not None and pos not in scope_positions:
                continue
            adam_step({key: params[key]}, {key: grads[key]}, self.cfg, group,
                      self.state)


def swa_average(checkpoints) -> Checkpoint:
    """Elementwise mean of parameters (and PAF coefficients) across checkpoints.

    Scale states are running maxima, not averaged quantities; the result
    carries the last checkpoint's scales.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise DataError("swa_average needs at least one checkpoint")
    keys = set(checkpoints[0].state["params"])
    for ck in checkpoints[1:]:
        if set(ck.state["params"]) != keys:
            raise DataError("swa_average: checkpoint structures differ")
        for k in keys:
            if ck.state["params"][k].shape != checkpoints[0].state["params"][k].shape:
                raise DataError(f"swa_average: shape mismatch for {k}")
    params = {
        k: np.mean([ck.state["params"][k] for ck in checkpoints], axis=0)
        for k in keys
    }
    return Checkpoint(
        state={"params": params, "scales": checkpoints[-1].state["scales"]},
        epoch=checkpoints[-1].epoch,
        val_acc=None,
    )


def pretrain(model: ModelGraph, datasets, cfg: TrainConfig,
             seed: int | None = None):
    """Train all parameters from scratch with the pretraining rate.

    Plain minibatch Adam for cfg.pretrain_epochs; keeps and restores the
    highest-validation state.  Returns (best val accuracy, accuracy curve).
    """
    from dataclasses import replace as dc_replace

    seed = cfg.seed if seed is None else seed
    pre_cfg = dc_replace(
        cfg, lr_paf=cfg.pretrain_lr, lr_other=cfg.pretrain_lr,
        wd_paf=cfg.pretrain_weight_decay, wd_other=cfg.pretrain_weight_decay,
    )
    train_ds, val_ds = datasets
    X, y = train_ds
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    opt = Adam(pre_cfg)
    best_acc = -1.0
    best_state = None
    curve = []
    for epoch in range(cfg.pretrain_epochs):
        rng = np.random.default_rng([seed, 999331, epoch])
        order = rng.permutation(len(X))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = model.forward(X[idx], train=True, dropout_on=cfg.dropout,
                                   rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise DivergenceError("pretraining loss became non-finite",
                                      last_state=model.state_dict())
            model.backward(dlogits)
            opt.step(model, {PAF_GROUP, OTHER_GROUP})
        acc, _ = evaluate(model, val_ds)
        curve.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_state = model.state_dict()
    if best_state is not None:
        model.load_state_dict(best_state)
    return best_acc, curve


def evaluate(model: ModelGraph, dataset, batch_size: int = 256):
    """(accuracy, mean loss) over a dataset; eval phase, dropout off."""
    X, y = dataset
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(X) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    correct = 0
    total_loss = 0.0
    for start in range(0, len(X), batch_size):
        xb = X[start:start + batch_size]
        yb = y[start:start + batch_size]
        logits = model.forward(xb, train=False)
        loss, _ = softmax_cross_entropy(logits, yb)
        total_loss += loss * len(xb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return correct / len(X), total_loss / len(X)
