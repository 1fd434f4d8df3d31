"""Composite odd polynomials used as sign approximations.

A sign approximation is a composition of odd polynomials applied
innermost-first.  ReLU and Max are reconstructed from it:

    relu(x) = (x + x * sign(x)) / 2
    max(x, y) = ((x + y) + (x - y) * sign(x - y)) / 2

The module also builds evaluation plans that expose the FHE-relevant cost
of a composite: multiplication depth (ceil(log2(degree + 1)) per stage,
summed) and the number of ciphertext-by-ciphertext products.  Products of
a plaintext coefficient with a ciphertext are cheap under CKKS and are
counted separately as scalar multiplications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "OddPolynomial",
    "CompositePaf",
    "EvaluationPlan",
    "EXACT_SIGN",
    "eval_odd_poly",
    "eval_odd_poly_horner",
    "eval_composite",
    "relu_paf",
    "max_paf",
    "build_plan",
    "evaluate_plan",
    "composite_forward",
    "composite_backward",
    "odd_derivative",
]

_STAGE_VARS = "xyzwvu"


@dataclass(frozen=True)
class OddPolynomial:
    """Odd polynomial: coefficients[k] multiplies x**(2k+1)."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ValueError("odd polynomial needs at least one coefficient")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        return 2 * len(self.coefficients) - 1

    def __call__(self, x):
        return eval_odd_poly(self, x)


@dataclass(frozen=True)
class CompositePaf:
    """Sign approximation built by nesting odd polynomial stages.

    ``stages`` are applied innermost-first: stages[0] sees the raw input.
    ``per_layer`` optionally overrides the stage coefficients for a given
    non-polynomial layer ordinal (0-based, inference order); override sets
    must have the same stage shapes as the default.
    """

    name: str
    stages: tuple[OddPolynomial, ...]
    per_layer: Mapping[int, tuple[OddPolynomial, ...]] = field(default_factory=dict)
    stage_names: tuple[str, ...] = ()
    coeff_symbols: tuple[str, ...] = ()

    def __post_init__(self):
        stages = tuple(
            s if isinstance(s, OddPolynomial) else OddPolynomial(tuple(s))
            for s in self.stages
        )
        if not stages:
            raise ValueError("composite PAF needs at least one stage")
        object.__setattr__(self, "stages", stages)
        per_layer = {}
        for idx, override in dict(self.per_layer).items():
            override = tuple(
                s if isinstance(s, OddPolynomial) else OddPolynomial(tuple(s))
                for s in override
            )
            if [len(s.coefficients) for s in override] != [
                len(s.coefficients) for s in stages
            ]:
                raise ValueError(
                    f"per-layer override {idx} of {self.name!r} does not match "
                    "the default stage shapes"
                )
            per_layer[int(idx)] = override
        object.__setattr__(self, "per_layer", MappingProxyType(per_layer))
        if not self.stage_names:
            object.__setattr__(
                self, "stage_names", tuple(f"s{i}" for i in range(len(stages)))
            )
        if not self.coeff_symbols:
            object.__setattr__(self, "coeff_symbols", ("c",) * len(stages))

    @property
    def stage_degrees(self) -> tuple[int, ...]:
        return tuple(s.degree for s in self.stages)

    @property
    def product_degree(self) -> int:
        """Degree of the expanded composite polynomial."""
        return math.prod(self.stage_degrees)

    @property
    def degree_sum(self) -> int:
        """Sum of per-stage degrees (the other published "degree" reading)."""
        return sum(self.stage_degrees)

    def stages_for(self, layer: int | None = None) -> tuple[OddPolynomial, ...]:
        if layer is None:
            return self.stages
        return self.per_layer.get(int(layer), self.stages)

    def with_layer_coefficients(
        self, layer: int, stages: Sequence[Sequence[float]]
    ) -> "CompositePaf":
        """Return a copy whose per-layer table maps ``layer`` to ``stages``."""
        per_layer = dict(self.per_layer)
        per_layer[int(layer)] = tuple(OddPolynomial(tuple(s)) for s in stages)
        return CompositePaf(
            name=self.name,
            stages=self.stages,
            per_layer=per_layer,
            stage_names=self.stage_names,
            coeff_symbols=self.coeff_symbols,
        )

    def __call__(self, x, layer: int | None = None):
        return eval_composite(self, x, layer)


class _ExactSign:
    """Sentinel standing in for a CompositePaf: use the true sign function.

    Reconstruction through the exact sign is the reference mode used by
    oracle-equivalence tests; relu_paf/max_paf then equal native ReLU/max.
    """

    def __repr__(self):
        return "EXACT_SIGN"


EXACT_SIGN = _ExactSign()


def _check_finite(x):
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise DomainError("polynomial evaluation requires finite input")


def eval_odd_poly(p: OddPolynomial, x):
    """Evaluate an odd polynomial following its power schedule.

    Powers are produced the way the evaluation plan does (x**2 once, then
    each odd power as the previous odd power times x**2), so plan-based
    cost accounting and numeric evaluation agree.
    """
    _check_finite(x)
    coeffs = p.coefficients
    x = np.asarray(x, dtype=float) if isinstance(x, np.ndarray) else float(x)
    acc = coeffs[0] * x
    if len(coeffs) == 1:
        return acc
    sq = x * x
    odd = x
    for c in coeffs[1:]:
        odd = odd * sq
        acc = acc + c * odd
    return acc


def eval_odd_poly_horner(p: OddPolynomial, x):
    """Naive Horner evaluation, p(x) = x * q(x**2); independent of the plan."""
    _check_finite(x)
    sq = x * x
    acc = 0.0
    for c in reversed(p.coefficients):
        acc = acc * sq + c
    return x * acc


def eval_composite(paf: CompositePaf, x, layer: int | None = None):
    """Nested stage evaluation, innermost stage first."""
    if layer is not None and layer not in paf.per_layer and paf.per_layer:
        raise KeyError(
            f"PAF {paf.name!r} has no per-layer coefficients for layer {layer}"
        )
    out = x
    for stage in paf.stages_for(layer):
        out = eval_odd_poly(stage, out)
    return out


def _sign_value(paf, x, layer=None):
    if paf is EXACT_SIGN or paf is None:
        return np.sign(x)
    return eval_composite(paf, x, layer)


def relu_paf(paf, x, layer: int | None = None):
    """(x + x * s) / 2 with s the sign approximation (exact in reference mode)."""
    s = _sign_value(paf, x, layer)
    return (x + x * s) / 2


def max_paf(paf, x, y, layer: int | None = None):
    """Approximate max from the sign of the difference.

    In exact-sign mode this returns the native max directly: the
    reconstruction ((x+y) + (x-y)*sign(x-y))/2 is algebraically identical
    but not bit-exact in floating point, and reference mode must be.
    """
    if paf is EXACT_SIGN or paf is None:
        return np.maximum(x, y)
    d = x - y
    return ((x + y) + d * _sign_value(paf, d, layer)) / 2


def odd_derivative(coefficients, x):
    """d/dx of sum c_k x**(2k+1) = sum (2k+1) c_k x**(2k)."""
    sq = x * x
    acc = 0.0
    for k in reversed(range(len(coefficients))):
        acc = acc * sq + (2 * k + 1) * coefficients[k]
    return acc


def composite_forward(stage_coeffs, u):
    """Evaluate a composite given raw per-stage coefficient sequences.

    Returns the list of intermediate values [u, z1, ..., q(u)]; callers
    keep it around for composite_backward.
    """
    zs = [u]
    for coeffs in stage_coeffs:
        zs.append(eval_odd_poly(OddPolynomial(tuple(coeffs)), zs[-1]))
    return zs


def composite_backward(stage_coeffs, zs, upstream):
    """Backpropagate through a composite evaluated by composite_forward.

    upstream is dL/dq elementwise.  Returns (coeff_grads, input_grad) where
    coeff_grads[j][m] = dL/d stage_j coefficient m (summed over elements)
    and input_grad = dL/du elementwise.
    """
    g = np.asarray(upstream, dtype=float)
    coeff_grads = [None] * len(stage_coeffs)
    for j in reversed(range(len(stage_coeffs))):
        zin = zs[j]
        coeffs = stage_coeffs[j]
        grads = np.empty(len(coeffs))
        power = zin
        zin_sq = zin * zin
        for m in range(len(coeffs)):
            grads[m] = np.sum(g * power)
            power = power * zin_sq
        coeff_grads[j] = grads
        g = g * odd_derivative(coeffs, zin)
    return coeff_grads, g


@dataclass(frozen=True)
class EvaluationPlan:
    """Cost-model view of a composite PAF.

    ``steps`` lists, stage by stage, each computed power of the stage
    variable as (power, (operand_a, operand_b)) with power = a + b and both
    operands previously available.  Every step is one ciphertext-ciphertext
    product; plaintext-coefficient products are excluded from
    ``nonscalar_mults`` and tallied as ``scalar_mults`` instead.

    ``level_trace`` records (level, labels) rows: which values become
    available as each ciphertext level is consumed, following the
    squaring schedule for the stage's top term.
    """

    paf_name: str
    stage_steps: tuple[tuple[tuple[int, tuple[int, int]], ...], ...]
    depth_per_stage: tuple[int, ...]
    total_depth: int
    nonscalar_mults: int
    scalar_mults: int
    level_trace: tuple[tuple[int, tuple[str, ...]], ...]

    @property
    def steps(self) -> tuple[tuple[int, tuple[int, int]], ...]:
        """All power-computation steps, stages concatenated in order."""
        return tuple(s for stage in self.stage_steps for s in stage)


def _stage_power_steps(n_terms: int) -> tuple[tuple[int, tuple[int, int]], ...]:
    # x^2 = x*x, then each odd power from the previous odd power and x^2
    if n_terms < 2:
        return ()
    steps = [(2, (1, 1))]
    for k in range(1, n_terms):
        steps.append((2 * k + 1, (2 * k - 1, 2)))
    return tuple(steps)


def _stage_trace(sym, var, out_var, stage_name, degree, depth, start, is_first, is_last):
    rows = []
    if is_first:
        rows.append((0, (f"{sym}{degree}", var)))
    if degree == 1:
        labels = [f"{sym}1*{var}"]
        if not is_last:
            labels.append(f"{out_var} = {stage_name}({var})")
        rows.append((start + 1, tuple(labels)))
        return rows
    rows.append((start + 1, (f"{sym}{degree}*{var}", f"{var}^2")))
    for j in range(2, depth):
        rows.append((start + j, (f"{var}^{2 ** j}",)))
    labels = [f"{sym}{degree}*{var}^{degree}"]
    if not is_last:
        labels.append(f"{out_var} = {stage_name}({var})")
    rows.append((start + depth, tuple(labels)))
    return rows


def build_plan(paf: CompositePaf, layer: int | None = None) -> EvaluationPlan:
    """Power schedule, multiplication depth, and level trace for a PAF."""
    stages = paf.stages_for(layer)
    stage_steps = []
    depths = []
    trace = []
    scalar = 0
    level = 0
    for i, stage in enumerate(stages):
        n_terms = len(stage.coefficients)
        steps = _stage_power_steps(n_terms)
        available = {1}
        for power, (a, b) in steps:
            if a not in available or b not in available or a + b != power:
                raise AssertionError("power schedule is not a valid product chain")
            available.add(power)
        stage_steps.append(steps)
        depth = math.ceil(math.log2(stage.degree + 1))
        depths.append(depth)
        scalar += n_terms
        var = _STAGE_VARS[i % len(_STAGE_VARS)]
        out_var = _STAGE_VARS[(i + 1) % len(_STAGE_VARS)]
        trace.extend(
            _stage_trace(
                paf.coeff_symbols[i],
                var,
                out_var,
                paf.stage_names[i],
                stage.degree,
                depth,
                level,
                is_first=(i == 0),
                is_last=(i == len(stages) - 1),
            )
        )
        level += depth
    return EvaluationPlan(
        paf_name=paf.name,
        stage_steps=tuple(stage_steps),
        depth_per_stage=tuple(depths),
        total_depth=sum(depths),
        nonscalar_mults=sum(len(s) for s in stage_steps),
        scalar_mults=scalar,
        level_trace=tuple(trace),
    )


def evaluate_plan(plan: EvaluationPlan, paf: CompositePaf, x, layer: int | None = None):
    """Evaluate the composite by literally executing the plan's steps."""
    _check_finite(x)
    stages = paf.stages_for(layer)
    if len(stages) != len(plan.stage_steps):
        raise ValueError("plan does not match the PAF's stage structure")
    value = x
    for stage, steps in zip(stages, plan.stage_steps):
        powers = {1: value}
        for power, (a, b) in steps:
            powers[power] = powers[a] * powers[b]
        value = sum(
            c * powers[2 * k + 1] for k, c in enumerate(stage.coefficients)
        )
    return value
