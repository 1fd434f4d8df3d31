"""Training orchestration: progressive replacement, alternate training,
training groups with SWA and best-checkpoint selection, overfitting-driven
dropout, and the network-wise baseline strategy.

A training group is E epochs of Adam on one trainable set, followed by
stochastic weight averaging of the E epoch snapshots; the best of the
E + 1 candidates by validation accuracy is installed.  A step owns one
layer replacement and keeps launching groups while validation accuracy
improves, engaging dropout on overfitting and swapping the trainable set
when progress stalls; two consecutive stalled groups end the step.

Per-(step, group, epoch) seeding keeps runs bit-reproducible and makes a
run resumable from the last completed group.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .catalog import composite_from_dict, composite_to_dict
from .ct import CtConfig, collect_ct_dataset, split_ct, tune_coefficients
from .errors import ConfigError, DataError, DivergenceError, PafForgeError
from .nn import (
    Adam,
    Checkpoint,
    MaxPool2x2,
    ModelGraph,
    PafActivation,
    ReLU,
    TrainConfig,
    evaluate,
    softmax_cross_entropy,
    swa_average,
)
from .paf import CompositePaf
from .scaling import ScaleMode, freeze_static

__all__ = [
    "Toggles",
    "TrainingGroupRecord",
    "StepState",
    "ScheduleReport",
    "ReplacementComplete",
    "replace_next_nonpoly",
    "run_training_group",
    "detect_overfitting",
    "alternate_swap",
    "run_step",
    "run_framework",
    "run_baseline",
]

PAF_SET = "paf"
OTHER_SET = "other"
OVERFIT_MARGIN = 0.10
DEFAULT_IMPROVEMENT_EPS = 1e-4
DEFAULT_MAX_GROUPS = 8


class ReplacementComplete(PafForgeError):
    """Raised when a model has no non-polynomial layer left to replace."""


@dataclass(frozen=True)
class Toggles:
    """Technique switches, ablation-style; independent of each other."""

    ct: bool = True
    pa: bool = True
    at: bool = True
    ds_ss: bool = True


@dataclass(frozen=True)
class TrainingGroupRecord:
    trainable: str
    epoch_entries: tuple[tuple[float, float], ...]  # (train acc, val acc) per epoch
    swa_entry: tuple[float, float]
    selected_id: str  # "epoch<k>" or "swa"
    selected_train_acc: float
    selected_val_acc: float
    techniques: dict

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            trainable=d["trainable"],
            epoch_entries=tuple(tuple(e) for e in d["epoch_entries"]),
            swa_entry=tuple(d["swa_entry"]),
            selected_id=d["selected_id"],
            selected_train_acc=d["selected_train_acc"],
            selected_val_acc=d["selected_val_acc"],
            techniques=dict(d["techniques"]),
        )


@dataclass(frozen=True)
class StepState:
    step_index: int
    trainable: str
    dropout_engaged: bool
    groups: tuple[TrainingGroupRecord, ...]
    best_val_acc: float
    cap_hit: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = [g.to_dict() for g in self.groups]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            step_index=d["step_index"],
            trainable=d["trainable"],
            dropout_engaged=d["dropout_engaged"],
            groups=tuple(TrainingGroupRecord.from_dict(g) for g in d["groups"]),
            best_val_acc=d["best_val_acc"],
            cap_hit=d.get("cap_hit", False),
        )


@dataclass(frozen=True)
class ScheduleReport:
    steps: tuple[StepState, ...]
    global_best_acc: float
    total_epochs: int
    config_hash: str
    seed: int
    final_val_acc: float | None = None
    baseline: bool = False
    ct_val_losses: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["steps"] = [s.to_dict() for s in self.steps]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            steps=tuple(StepState.from_dict(s) for s in d["steps"]),
            global_best_acc=d["global_best_acc"],
            total_epochs=d["total_epochs"],
            config_hash=d["config_hash"],
            seed=d["seed"],
            final_val_acc=d.get("final_val_acc"),
            baseline=d.get("baseline", False),
            ct_val_losses=tuple(d.get("ct_val_losses", ())),
        )


def default_config_hash(cfg: TrainConfig, ct_cfg: CtConfig, toggles: Toggles,
                        seed: int) -> str:
    blob = json.dumps(
        {"train": asdict(cfg), "ct": asdict(ct_cfg), "toggles": asdict(toggles),
         "seed": seed},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def replace_next_nonpoly(model: ModelGraph, paf: CompositePaf, *,
                         use_layer_coeffs: bool = True,
                         exact_sign: bool = False,
                         scale_mode: ScaleMode | None = None) -> int:
    """Replace the earliest remaining ReLU/MaxPool with a PAF activation.

    The new layer's ordinal is the number of replacements done so far;
    with use_layer_coeffs it carries the PAF's per-layer coefficients for
    that ordinal, otherwise the shared default row.  Returns the ordinal;
    raises ReplacementComplete when nothing is left.
    """
    positions = model.nonpoly_positions()
    if not positions:
        raise ReplacementComplete("model has no non-polynomial layers left")
    pos = positions[0]
    ordinal = len(model.paf_layers())
    source = model.layers[pos]
    stages = [
        list(s.coefficients)
        for s in (paf.stages_for(ordinal) if use_layer_coeffs else paf.stages)
    ]
    model.layers[pos] = PafActivation(
        stages=stages,
        kind="maxpool" if isinstance(source, MaxPool2x2) else "relu",
        scale_mode=scale_mode or ScaleMode(),
        exact_sign=exact_sign,
        ordinal=ordinal,
        paf_name=paf.name,
    )
    return ordinal


def _epoch_rng(seed, step_index, group_index, epoch):
    return np.random.default_rng([int(seed), step_index, group_index, epoch])


def _train_one_epoch(model, datasets, cfg, trainable, scope_positions, rng,
                     dropout_on, optimizer):
    X, y = datasets[0]
    order = rng.permutation(len(X))
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        logits = model.forward(X[idx], train=True, dropout_on=dropout_on, rng=rng)
        loss, dlogits = softmax_cross_entropy(logits, y[idx])
        if not np.isfinite(loss):
            raise DivergenceError("training loss became non-finite",
                                  last_state=model.state_dict())
        model.backward(dlogits)
        optimizer.step(model, {trainable}, scope_positions)


def run_training_group(model: ModelGraph, cfg: TrainConfig, trainable: str,
                       datasets, *, dropout_on: bool = False,
                       scope_positions=None, seed: int = 0,
                       step_index: int = 0, group_index: int = 0,
                       at_swap: bool = False) -> TrainingGroupRecord:
    """Train one group of E epochs, apply SWA, install the best candidate.

    Only the given trainable set ("paf" or "other") is updated, optionally
    restricted to the layer positions in scope_positions.  Optimizer state
    is local to the group.
    """
    if trainable not in (PAF_SET, OTHER_SET):
        raise ConfigError(f"unknown trainable set {trainable!r}")
    train_ds, val_ds = datasets
    optimizer = Adam(cfg)
    snapshots = []
    entries = []
    for epoch in range(cfg.group_epochs):
        rng = _epoch_rng(seed, step_index, group_index, epoch)
        _train_one_epoch(model, datasets, cfg, trainable, scope_positions, rng,
                         dropout_on, optimizer)
        train_acc, _ = evaluate(model, train_ds)
        val_acc, _ = evaluate(model, val_ds)
        entries.append((train_acc, val_acc))
        snapshots.append(Checkpoint(model.state_dict(), epoch=epoch, val_acc=val_acc))

    swa = swa_average(snapshots)
    model.load_state_dict(swa.state)
    swa_train, _ = evaluate(model, train_ds)
    swa_val, _ = evaluate(model, val_ds)

    epoch_vals = [v for _, v in entries]
    best_epoch = int(np.argmax(epoch_vals))
    # tie between an epoch checkpoint and the SWA checkpoint goes to SWA
    if swa_val >= epoch_vals[best_epoch]:
        selected_id = "swa"
        selected_train, selected_val = swa_train, swa_val
    else:
        selected_id = f"epoch{best_epoch}"
        selected_train, selected_val = entries[best_epoch]
        model.load_state_dict(snapshots[best_epoch].state)

    return TrainingGroupRecord(
        trainable=trainable,
        epoch_entries=tuple(entries),
        swa_entry=(swa_train, swa_val),
        selected_id=selected_id,
        selected_train_acc=selected_train,
        selected_val_acc=selected_val,
        techniques={"swa": selected_id == "swa", "dropout": dropout_on,
                    "at_swap": at_swap},
    )


def detect_overfitting(record: TrainingGroupRecord) -> bool:
    """Empirical rule: selected train accuracy strictly above val + 10%."""
    return record.selected_train_acc > record.selected_val_acc + OVERFIT_MARGIN


def alternate_swap(trainable: str) -> str:
    """Toggle the trainable set between PAF coefficients and other layers."""
    if trainable not in (PAF_SET, OTHER_SET):
        raise ConfigError(f"unknown trainable set {trainable!r}")
    return OTHER_SET if trainable == PAF_SET else PAF_SET


def _warm_scales(model: ModelGraph, X, batch_size: int = 256):
    """Fold the training set into every unfrozen dynamic scale.

    Run before snapshotting a step's entry state so that restoring it
    always leaves scales that can be frozen.
    """
    X = np.asarray(X, dtype=float)
    for start in range(0, len(X), batch_size):
        model.forward(X[start:start + batch_size], train=True)


@dataclass
class _StepLoop:
    """Mutable step-loop state; serializable for group-level resume."""

    step_index: int
    trainable: str = PAF_SET
    dropout_on: bool = False
    fail_streak: int = 0
    swapped_last: bool = False
    step_best: float = 0.0
    groups: list = field(default_factory=list)
    best_state: dict | None = None
    done: bool = False
    cap_hit: bool = False


def _state_to_jsonable(state: dict) -> dict:
    return {
        "params": {k: v.tolist() for k, v in state["params"].items()},
        "scales": state["scales"],
    }


def _state_from_jsonable(doc: dict) -> dict:
    return {
        "params": {k: np.array(v) for k, v in doc["params"].items()},
        "scales": doc["scales"],
    }


def _loop_to_dict(loop: _StepLoop) -> dict:
    d = asdict(loop)
    d["groups"] = [g.to_dict() for g in loop.groups]
    d["best_state"] = _state_to_jsonable(loop.best_state)
    return d


def _loop_from_dict(d: dict) -> _StepLoop:
    loop = _StepLoop(step_index=d["step_index"])
    loop.trainable = d["trainable"]
    loop.dropout_on = d["dropout_on"]
    loop.fail_streak = d["fail_streak"]
    loop.swapped_last = d["swapped_last"]
    loop.step_best = d["step_best"]
    loop.groups = [TrainingGroupRecord.from_dict(g) for g in d["groups"]]
    loop.best_state = _state_from_jsonable(d["best_state"])
    loop.done = d["done"]
    loop.cap_hit = d["cap_hit"]
    return loop


def run_step(model: ModelGraph, cfg: TrainConfig, datasets, *,
             step_index: int, scope_positions=None, seed: int = 0,
             at_enabled: bool = True, max_groups: int = DEFAULT_MAX_GROUPS,
             improvement_eps: float = DEFAULT_IMPROVEMENT_EPS,
             loop: _StepLoop | None = None, on_group=None) -> StepState:
    """Run training groups for the step owning the latest replacement.

    Starts by training the PAF coefficients.  While the selected validation
    accuracy improves over the step best, more groups launch; overfitting
    engages dropout for the rest of the step; a stall triggers one
    alternate-training swap, and a second consecutive stall (or a disabled
    swap) ends the step.  The step-best checkpoint is restored at the end.
    """
    if loop is None:
        _warm_scales(model, datasets[0][0], cfg.batch_size)
        val_acc, _ = evaluate(model, datasets[1])
        loop = _StepLoop(step_index=step_index, dropout_on=cfg.dropout,
                         step_best=val_acc, best_state=model.state_dict())

    while not loop.done:
        if len(loop.groups) >= max_groups:
            loop.cap_hit = True
            break
        record = run_training_group(
            model, cfg, loop.trainable, datasets,
            dropout_on=loop.dropout_on, scope_positions=scope_positions,
            seed=seed, step_index=loop.step_index, group_index=len(loop.groups),
            at_swap=loop.swapped_last,
        )
        loop.groups.append(record)
        improved = record.selected_val_acc > loop.step_best + improvement_eps
        overfit = detect_overfitting(record)
        newly_overfit = overfit and not loop.dropout_on
        if overfit:
            loop.dropout_on = True
        if improved:
            loop.step_best = record.selected_val_acc
            loop.best_state = model.state_dict()
            loop.fail_streak = 0
            loop.swapped_last = False
        elif newly_overfit:
            loop.swapped_last = False
        else:
            loop.fail_streak += 1
            if loop.fail_streak >= 2 or not at_enabled:
                loop.done = True
            else:
                loop.trainable = alternate_swap(loop.trainable)
                loop.swapped_last = True
        if on_group is not None:
            on_group(loop)

    model.load_state_dict(loop.best_state)
    return StepState(
        step_index=loop.step_index,
        trainable=loop.trainable,
        dropout_engaged=loop.dropout_on,
        groups=tuple(loop.groups),
        best_val_acc=loop.step_best,
        cap_hit=loop.cap_hit,
    )


def _profile_static_scales(model: ModelGraph, X) -> dict[int, float]:
    """Max-abs input per remaining non-polynomial layer ordinal."""
    _, taps = model.forward(np.asarray(X, dtype=float), train=False,
                            collect_taps=True)
    scales = {}
    for ordinal, (_, arr) in enumerate(taps):
        m = float(np.max(np.abs(arr)))
        scales[ordinal] = m if m > 0 else 1.0
    return scales


def run_framework(model: ModelGraph, paf: CompositePaf, datasets,
                  cfg: TrainConfig, *, toggles: Toggles | None = None,
                  ct_cfg: CtConfig | None = None, seed: int | None = None,
                  exact_sign: bool = False,
                  max_groups: int = DEFAULT_MAX_GROUPS,
                  improvement_eps: float = DEFAULT_IMPROVEMENT_EPS,
                  ct_max_samples: int = 16384,
                  config_hash: str | None = None,
                  resume: dict | None = None,
                  on_progress=None) -> ScheduleReport:
    """Full recovery pipeline on a pretrained model.

    Coefficient tuning runs offline first (when enabled), then one step per
    non-polynomial layer in inference order replaces and retrains it;
    dynamic scaling is active throughout and every scale is frozen static
    after the final step.  The model is modified in place; the returned
    report records every group.

    ``resume`` accepts the dict emitted through ``on_progress`` and
    continues from the last completed group.
    """
    toggles = toggles or Toggles()
    ct_cfg = ct_cfg or CtConfig()
    seed = cfg.seed if seed is None else seed
    if config_hash is None:
        config_hash = default_config_hash(cfg, ct_cfg, toggles, seed)
    train_ds, val_ds = datasets

    if resume is None:
        total_layers = model.nonpoly_count
        if total_layers == 0:
            raise DataError("model has no non-polynomial layers to replace")

        ct_losses = []
        if toggles.ct and not exact_sign:
            ctds = collect_ct_dataset(model, train_ds[0], seed=seed,
                                      max_samples=ct_max_samples)
            ct_train, ct_val = split_ct(ctds, ct_cfg.split_ratio, seed=seed)
            for ordinal in range(total_layers):
                paf, curve = tune_coefficients(
                    paf, ordinal, ct_train.layer(ordinal), ct_val.layer(ordinal),
                    ct_cfg,
                )
                ct_losses.append(min(curve))

        static_scales = None
        if not toggles.ds_ss:
            static_scales = _profile_static_scales(model, train_ds[0])

        steps: list[StepState] = []
        state = {
            "total_layers": total_layers,
            "ct_losses": ct_losses,
            "static_scales": static_scales,
            "next_step": 0,
            "steps": steps,
            "loop": None,
        }
    else:
        state = _framework_state_from_dict(resume, model)
        paf = state["paf"]
        steps = state["steps"]

    total_layers = state["total_layers"]
    static_scales = state["static_scales"]

    def make_scale(ordinal):
        if static_scales is None:
            return ScaleMode()
        return ScaleMode(variant="static", scale=static_scales[str(ordinal)]
                         if isinstance(static_scales, dict)
                         and str(ordinal) in static_scales
                         else static_scales[ordinal])

    def persist(loop):
        if on_progress is not None:
            on_progress(_framework_state_to_dict(state, model, paf, loop))

    step_plan = range(state["next_step"], total_layers if toggles.pa else 1)
    for step_index in step_plan:
        if state["loop"] is None or state["loop"].step_index != step_index:
            if toggles.pa:
                ordinal = replace_next_nonpoly(
                    model, paf, exact_sign=exact_sign,
                    scale_mode=make_scale(step_index))
                scope_limit = model.nonpoly_positions()[0] if \
                    model.nonpoly_positions() else len(model.layers)
            else:
                while True:
                    try:
                        k = replace_next_nonpoly(model, paf, exact_sign=exact_sign,
                                                 scale_mode=None)
                        model.paf_layers()[-1].scale_mode = make_scale(k)
                    except ReplacementComplete:
                        break
                scope_limit = len(model.layers)
            loop = None
        else:
            loop = state["loop"]
            scope_limit = state["scope_limit"]

        # progressive training: only layers at or before the replacement point
        positions = set(range(scope_limit)) if toggles.pa else None

        def save_group(lp, sl=scope_limit):
            state["loop"] = lp
            state["scope_limit"] = sl
            persist(lp)

        step = run_step(
            model, cfg, datasets, step_index=step_index,
            scope_positions=positions, seed=seed, at_enabled=toggles.at,
            max_groups=max_groups, improvement_eps=improvement_eps,
            loop=loop,
            on_group=save_group if on_progress else None,
        )
        steps.append(step)
        state["steps"] = steps
        state["next_step"] = step_index + 1
        state["loop"] = None
        persist(None)

    if toggles.ds_ss:
        for layer in model.paf_layers():
            if not layer.scale_mode.frozen:
                layer.scale_mode = freeze_static(layer.scale_mode)

    final_val, _ = evaluate(model, val_ds)
    return ScheduleReport(
        steps=tuple(steps),
        global_best_acc=max(s.best_val_acc for s in steps),
        total_epochs=sum(len(s.groups) for s in steps) * cfg.group_epochs,
        config_hash=config_hash,
        seed=seed,
        final_val_acc=final_val,
        ct_val_losses=tuple(state["ct_losses"]),
    )


def _framework_state_to_dict(state, model, paf, loop) -> dict:
    return {
        "schema_version": 1,
        "total_layers": state["total_layers"],
        "ct_losses": list(state["ct_losses"]),
        "static_scales": state["static_scales"],
        "next_step": state["next_step"],
        "steps": [s.to_dict() for s in state["steps"]],
        "loop": _loop_to_dict(loop) if loop is not None else None,
        "scope_limit": state.get("scope_limit"),
        "paf": composite_to_dict(paf),
        "model_state": _state_to_jsonable(model.state_dict()),
        "model_spec": model.to_spec(),
    }


def _framework_state_from_dict(doc: dict, model: ModelGraph) -> dict:
    from .nn import build_model  # local import to avoid a cycle at module load

    rebuilt = build_model(doc["model_spec"], auto_dropout=False)
    model.layers = rebuilt.layers
    model.load_state_dict(_state_from_jsonable(doc["model_state"]))
    return {
        "total_layers": doc["total_layers"],
        "ct_losses": list(doc["ct_losses"]),
        "static_scales": doc["static_scales"],
        "next_step": doc["next_step"],
        "steps": [StepState.from_dict(s) for s in doc["steps"]],
        "loop": _loop_from_dict(doc["loop"]) if doc["loop"] else None,
        "scope_limit": doc.get("scope_limit"),
        "paf": composite_from_dict(doc["paf"]),
    }


def run_baseline(model: ModelGraph, paf: CompositePaf, datasets,
                 cfg: TrainConfig, epoch_budget: int, *,
                 seed: int | None = None, exact_sign: bool = False,
                 config_hash: str | None = None) -> ScheduleReport:
    """Network-wise comparison strategy: replace everything, train the rest.

    All non-polynomial layers are replaced at once with the same shared
    (non-tuned) coefficients; every layer except the PAF coefficients then
    trains for the full epoch budget under the same group/SWA/dropout
    machinery.  Pass the paired framework run's total epochs as the budget
    for a head-to-head comparison.
    """
    seed = cfg.seed if seed is None else seed
    if config_hash is None:
        config_hash = default_config_hash(cfg, CtConfig(), Toggles(), seed)
    if epoch_budget < cfg.group_epochs or epoch_budget % cfg.group_epochs:
        raise ConfigError(
            f"epoch budget {epoch_budget} must be a positive multiple of "
            f"E={cfg.group_epochs}"
        )
    train_ds, val_ds = datasets
    replaced = model.nonpoly_count
    while True:
        try:
            replace_next_nonpoly(model, paf, use_layer_coeffs=False,
                                 exact_sign=exact_sign)
        except ReplacementComplete:
            break

    n_groups = epoch_budget // cfg.group_epochs
    dropout_on = cfg.dropout
    groups = []
    _warm_scales(model, train_ds[0], cfg.batch_size)
    entry_val, _ = evaluate(model, val_ds)
    best_val = entry_val
    best_state = model.state_dict()
    for g in range(n_groups):
        record = run_training_group(
            model, cfg, OTHER_SET, datasets, dropout_on=dropout_on,
            seed=seed, step_index=0, group_index=g,
        )
        groups.append(record)
        if detect_overfitting(record):
            dropout_on = True
        if record.selected_val_acc > best_val:
            best_val = record.selected_val_acc
            best_state = model.state_dict()
    model.load_state_dict(best_state)

    for layer in model.paf_layers():
        if not layer.scale_mode.frozen:
            layer.scale_mode = freeze_static(layer.scale_mode)
    final_val, _ = evaluate(model, val_ds)

    step = StepState(
        step_index=replaced,
        trainable=OTHER_SET,
        dropout_engaged=dropout_on,
        groups=tuple(groups),
        best_val_acc=best_val,
    )
    return ScheduleReport(
        steps=(step,),
        global_best_acc=best_val,
        total_epochs=n_groups * cfg.group_epochs,
        config_hash=config_hash,
        seed=seed,
        final_val_acc=final_val,
        baseline=True,
    )
