"""FHE cost estimation for catalog PAFs.

Depth and multiplication counts come straight from the evaluation plan.
An opt-in calibration fits an affine model (depth, nonscalar mults) ->
measured per-activation latency to the shipped reference measurements;
absolute latency is hardware-bound, so the proxy is off by default and
fit residuals are always reported alongside it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .catalog import PafCatalog, load_catalog, normalize_name
from .errors import DataError
from .paf import build_plan

__all__ = [
    "CostEstimate",
    "estimate_cost",
    "load_paper_latencies",
    "rank_correlation",
]


@dataclass(frozen=True)
class CostEstimate:
    paf_name: str
    total_depth: int
    nonscalar_mults: int
    scalar_mults: int
    latency_proxy_ms: float | None = None
    calibration_residuals_ms: tuple[float, ...] | None = None


def load_paper_latencies(source=None, include_prior_art: bool = False) -> dict:
    """Reference per-activation latencies (ms) keyed by canonical PAF name.

    The prior-art 27-degree entry is excluded unless asked for; it is not a
    catalog PAF and would distort five-PAF rank checks.
    """
    if source is None:
        text = (
            resources.files("pafforge")
            .joinpath("data/paper_latency_ms.json")
            .read_text()
        )
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise DataError(f"cannot read latency file {source}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(
            f"latency file: malformed JSON at line {exc.lineno}: {exc.msg}"
        ) from exc
    table = {normalize_name(k): float(v) for k, v in doc["latency_ms"].items()}
    if include_prior_art and "prior_art" in doc:
        for alias in doc["prior_art"].get("aliases", ()):
            table[normalize_name(alias)] = float(doc["prior_art"]["latency_ms"])
    return table


def _rank_with_ties(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_correlation(a, b) -> float:
    """Spearman correlation with average ranks for ties."""
    ra, rb = _rank_with_ties(a), _rank_with_ties(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0:
        raise DataError("rank correlation undefined for constant inputs")
    return float((ra * rb).sum() / denom)


def _calibration_fit(catalog: PafCatalog, latencies: dict):
    names = [n for n in catalog.names() if n in latencies]
    if len(names) < 3:
        raise DataError("calibration needs at least 3 PAFs with latencies")
    rows = []
    lat = []
    for name in names:
        plan = build_plan(catalog.get(name))
        rows.append([1.0, plan.total_depth, plan.nonscalar_mults])
        lat.append(latencies[name])
    A = np.array(rows)
    b = np.array(lat)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    residuals = b - A @ coef
    return coef, {n: float(r) for n, r in zip(names, residuals)}


def estimate_cost(paf_name: str, catalog: PafCatalog | None = None,
                  calibration: bool | str | Path | dict = False) -> CostEstimate:
    """Depth and multiplication counts for a catalog PAF.

    calibration: False (default) for counts only; True for the shipped
    reference latencies; a path or a {name: ms} dict for custom ones.
    """
    catalog = catalog or load_catalog()
    paf = catalog.get(paf_name)
    plan = build_plan(paf)
    latency = None
    residuals = None
    if calibration is not False:
        if calibration is True:
            latencies = load_paper_latencies()
        elif isinstance(calibration, dict):
            latencies = {normalize_name(k): float(v) for k, v in calibration.items()}
        else:
            latencies = load_paper_latencies(calibration)
        coef, resid = _calibration_fit(catalog, latencies)
        latency = float(
            coef[0] + coef[1] * plan.total_depth + coef[2] * plan.nonscalar_mults
        )
        residuals = tuple(resid[n] for n in sorted(resid))
    return CostEstimate(
        paf_name=paf.name,
        total_depth=plan.total_depth,
        nonscalar_mults=plan.nonscalar_mults,
        scalar_mults=plan.scalar_mults,
        latency_proxy_ms=latency,
        calibration_residuals_ms=residuals,
    )
