"""Experiment configuration: strict JSON schema with unknown-key rejection.

Ablation configs must be auditable, so any key the schema does not know
is an error rather than a silent no-op.  PAFFORGE_SEED in the environment
overrides the configured seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .ct import CtConfig
from .errors import ConfigError
from .nn import TrainConfig
from .scheduler import Toggles

__all__ = ["ExperimentConfig", "load_config", "config_hash"]

SEED_ENV_VAR = "PAFFORGE_SEED"

_DATASET_KEYS = {
    "kind", "n", "classes", "dims", "seed", "spread", "images", "labels",
    "limit", "path", "label_column", "normalization", "val_fraction",
}
_MODEL_KEYS = {
    "kind", "in_features", "out_features", "in_channels", "out_channels",
    "padding", "p", "stage_sizes", "paf_kind", "exact_sign", "ordinal",
    "paf_name",
}


def _check_keys(raw: dict, allowed, where: str):
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def _dataclass_from(raw: dict, cls, where: str):
    _check_keys(raw, {f.name for f in fields(cls)}, where)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    model: tuple[dict, ...]
    dataset: dict
    paf: str = "f1^2og1^2"
    toggles: Toggles = field(default_factory=Toggles)
    train: TrainConfig = field(default_factory=TrainConfig)
    ct: CtConfig = field(default_factory=CtConfig)
    epoch_budget: int | None = None
    seed: int = 0
    output: str = "report.json"
    auto_dropout: bool = True

    def __post_init__(self):
        if not self.model:
            raise ConfigError("model: layer list must not be empty")
        for i, layer in enumerate(self.model):
            _check_keys(layer, _MODEL_KEYS, f"model[{i}]")
        _check_keys(self.dataset, _DATASET_KEYS, "dataset")
        if self.epoch_budget is not None and self.epoch_budget < 1:
            raise ConfigError("epoch_budget must be >= 1")

    def to_dict(self) -> dict:
        return {
            "model": [dict(l) for l in self.model],
            "dataset": dict(self.dataset),
            "paf": self.paf,
            "toggles": asdict(self.toggles),
            "train": asdict(self.train),
            "ct": asdict(self.ct),
            "epoch_budget": self.epoch_budget,
            "seed": self.seed,
            "output": self.output,
            "auto_dropout": self.auto_dropout,
        }


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True).encode()
    ).hexdigest()


_TOP_KEYS = {
    "model", "dataset", "paf", "toggles", "train", "ct", "epoch_budget",
    "seed", "output", "auto_dropout",
}


def parse_config(raw: dict, where: str = "config") -> ExperimentConfig:
    _check_keys(raw, _TOP_KEYS, where)
    if "model" not in raw or "dataset" not in raw:
        raise ConfigError(f"{where}: 'model' and 'dataset' are required")
    toggles = _dataclass_from(raw.get("toggles", {}), Toggles, f"{where}.toggles")
    train = _dataclass_from(raw.get("train", {}), TrainConfig, f"{where}.train")
    ct = _dataclass_from(raw.get("ct", {}), CtConfig, f"{where}.ct")
    seed = int(raw.get("seed", 0))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
    return ExperimentConfig(
        model=tuple(raw["model"]),
        dataset=dict(raw["dataset"]),
        paf=raw.get("paf", "f1^2og1^2"),
        toggles=toggles,
        train=train,
        ct=ct,
        epoch_budget=raw.get("epoch_budget"),
        seed=seed,
        output=raw.get("output", "report.json"),
        auto_dropout=bool(raw.get("auto_dropout", True)),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return parse_config(raw, where=str(path))
