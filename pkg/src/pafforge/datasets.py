"""Dataset ingestion: synthetic gaussian blobs, IDX image files, CSV."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "make_blobs",
    "load_idx_images",
    "load_idx_labels",
    "load_csv",
    "load_dataset",
    "train_val_split",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def make_blobs(n: int, classes: int, dims: int, seed: int = 0,
               spread: float = 1.0, center_scale: float = 4.0):
    """Gaussian clusters, one per class; deterministic for a fixed seed."""
    if n < classes or classes < 2 or dims < 1:
        raise ConfigError("blobs need n >= classes >= 2 and dims >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(classes, dims))
    labels = rng.integers(0, classes, size=n)
    X = centers[labels] + rng.normal(0.0, spread, size=(n, dims))
    return X, labels.astype(int)


def _read_idx(path, expected_magic, ndim):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read IDX file {path}: {exc}") from exc
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header at offset {len(raw)}")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise DataError(
            f"{path}: bad IDX magic 0x{magic:08x} at offset 0, "
            f"expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise DataError(
            f"{path}: expected {count} data bytes after offset {header}, "
            f"got {len(raw) - header}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    return data.reshape(dims)


def load_idx_images(path, limit: int | None = None) -> np.ndarray:
    """(count, rows, cols) uint8 image tensor from an IDX file."""
    images = _read_idx(path, IDX_IMAGES_MAGIC, 3)
    return images[:limit] if limit is not None else images


def load_idx_labels(path, limit: int | None = None) -> np.ndarray:
    labels = _read_idx(path, IDX_LABELS_MAGIC, 1)
    return labels[:limit].astype(int) if limit is not None else labels.astype(int)


def load_csv(path, label_column: int = -1):
    """Numeric CSV with one sample per row; labels default to the last column."""
    rows = []
    try:
        with open(path, newline="") as f:
            for i, row in enumerate(csv.reader(f)):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise DataError(f"{path}: row {i}: {exc}") from exc
                if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                    raise DataError(
                        f"{path}: ragged row {i}: {len(rows[-1])} fields, "
                        f"expected {len(rows[0])}"
                    )
    except OSError as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    label_column = label_column if label_column >= 0 else arr.shape[1] + label_column
    y = arr[:, label_column]
    X = np.delete(arr, label_column, axis=1)
    if not np.all(y == y.astype(int)):
        raise DataError(f"{path}: label column {label_column} is not integral")
    return X, y.astype(int)


def _apply_normalization(X, spec):
    if spec in (None, "none"):
        return X
    if spec == "standardize":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return (X - mean) / std
    if isinstance(spec, dict):
        shift = np.asarray(spec.get("shift", 0.0))
        scale = np.asarray(spec.get("scale", 1.0))
        if np.any(scale == 0):
            raise ConfigError("normalization scale must be nonzero")
        return (X - shift) / scale
    raise ConfigError(f"unknown normalization {spec!r}")


def load_dataset(spec: dict):
    """Build (features, labels) from a dataset spec dict.

    kinds: synthetic-blobs {n, classes, dims, seed, spread?}, idx {images,
    labels, limit?}, csv {path, label_column?}.  All kinds accept
    "normalization": "none" | "standardize" | {shift, scale}.
    """
    kind = spec.get("kind")
    if kind in ("synthetic-blobs", "blobs"):
        X, y = make_blobs(
            int(spec["n"]), int(spec["classes"]), int(spec["dims"]),
            seed=int(spec.get("seed", 0)), spread=float(spec.get("spread", 1.0)),
        )
    elif kind == "idx":
        limit = spec.get("limit")
        images = load_idx_images(spec["images"], limit)
        y = load_idx_labels(spec["labels"], limit)
        if len(images) != len(y):
            raise DataError("IDX image/label counts differ")
        X = images.astype(float) / 255.0
        X = X[:, None, :, :]  # single channel
    elif kind == "csv":
        X, y = load_csv(spec["path"], int(spec.get("label_column", -1)))
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    classes = int(y.max()) + 1 if len(y) else 0
    if np.any(y < 0):
        raise DataError("labels must be non-negative")
    if "classes" in spec and classes > int(spec["classes"]):
        raise DataError(
            f"label {int(y.max())} out of range for {spec['classes']} classes"
        )
    X = _apply_normalization(np.asarray(X, dtype=float), spec.get("normalization"))
    return X, y


def train_val_split(X, y, val_fraction: float = 0.2, seed: int = 0):
    """Shuffled disjoint split used by the training harness."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(X))
    n_val = max(1, int(round(val_fraction * len(X))))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (X[train_idx], y[train_idx]), (X[val_idx], y[val_idx])
