"""Catalog of published composite PAFs with per-layer coefficient tables.

The catalog ships as JSON (``data/paf_catalog.json``) so coefficients stay
data, never source.  Exactly five forms are published: alpha7 (one shared
coefficient row) and four f/g composites with one coefficient row per
ReLU layer (17 rows).  The 27-degree alpha=10 form has no published
coefficients and is therefore absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import DataError, UnknownPafError
from .paf import CompositePaf, OddPolynomial

__all__ = [
    "PafCatalog",
    "load_catalog",
    "normalize_name",
    "composite_to_dict",
    "composite_from_dict",
    "CATALOG_NAMES",
]

CATALOG_NAMES = ("alpha7", "f1^2og1^2", "f2og3", "f2og2", "f1og2")

_EXPECTED_LAYER_ROWS = {"alpha7": 0}  # others carry the full 17-row table
_DEFAULT_LAYER_ROWS = 17


def normalize_name(name: str) -> str:
    """Canonicalize a PAF name: 'f1^2∘g1^2' and 'F1^2 o G1^2' both resolve."""
    s = name.strip().lower().replace(" ", "")
    s = s.replace("∘", "o").replace("·", "")
    s = s.replace("circ", "o")
    return s


@dataclass(frozen=True)
class PafCatalog:
    entries: Mapping[str, CompositePaf]
    aliases: Mapping[str, str]

    def names(self) -> tuple[str, ...]:
        return tuple(self.entries)

    def get(self, name: str) -> CompositePaf:
        key = normalize_name(name)
        key = self.aliases.get(key, key)
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownPafError(
                f"unknown PAF {name!r}; catalog has {', '.join(self.entries)}"
            ) from None

    def __contains__(self, name: str) -> bool:
        key = normalize_name(name)
        return self.aliases.get(key, key) in self.entries

    def __iter__(self):
        return iter(self.entries.values())


def composite_to_dict(paf: CompositePaf) -> dict:
    """Serialize a CompositePaf in the catalog entry format."""
    return {
        "name": paf.name,
        "stage_names": list(paf.stage_names),
        "coeff_symbols": list(paf.coeff_symbols),
        "stages": [list(s.coefficients) for s in paf.stages],
        "per_layer": {
            str(k): [list(s.coefficients) for s in v]
            for k, v in paf.per_layer.items()
        },
    }


def composite_from_dict(raw: dict) -> CompositePaf:
    """Inverse of composite_to_dict."""
    return _entry_from_dict(raw, "<in-memory>")


def _entry_from_dict(raw: dict, path: str) -> CompositePaf:
    try:
        per_layer = {
            int(k): tuple(OddPolynomial(tuple(s)) for s in v)
            for k, v in raw.get("per_layer", {}).items()
        }
        return CompositePaf(
            name=raw["name"],
            stages=tuple(OddPolynomial(tuple(s)) for s in raw["stages"]),
            per_layer=per_layer,
            stage_names=tuple(raw.get("stage_names", ())),
            coeff_symbols=tuple(raw.get("coeff_symbols", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad catalog entry {raw.get('name', '?')!r}: {exc}")


def _validate(catalog: PafCatalog, path: str):
    present = set(catalog.entries)
    if present != set(CATALOG_NAMES):
        raise DataError(
            f"{path}: catalog must contain exactly {CATALOG_NAMES}, got {sorted(present)}"
        )
    for name, paf in catalog.entries.items():
        expected = _EXPECTED_LAYER_ROWS.get(name, _DEFAULT_LAYER_ROWS)
        if len(paf.per_layer) != expected:
            raise DataError(
                f"{path}: {name} must carry {expected} per-layer rows, "
                f"got {len(paf.per_layer)}"
            )
        if expected and sorted(paf.per_layer) != list(range(expected)):
            raise DataError(f"{path}: {name} per-layer indices must be 0..{expected - 1}")


def load_catalog(source: str | Path | None = None) -> PafCatalog:
    """Load the PAF catalog from a JSON file (default: the packaged data)."""
    if source is None:
        text = (
            resources.files("pafforge").joinpath("data/paf_catalog.json").read_text()
        )
        path = "pafforge/data/paf_catalog.json"
    else:
        path = str(source)
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise DataError(f"cannot read catalog file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise DataError(f"{path}: expected an object with an 'entries' list")
    entries = {}
    aliases = {}
    for raw in doc["entries"]:
        paf = _entry_from_dict(raw, path)
        key = normalize_name(paf.name)
        entries[key] = paf
        for alias in raw.get("aliases", ()):
            aliases[normalize_name(alias)] = key
    catalog = PafCatalog(
        entries=MappingProxyType(entries), aliases=MappingProxyType(aliases)
    )
    _validate(catalog, path)
    return catalog
