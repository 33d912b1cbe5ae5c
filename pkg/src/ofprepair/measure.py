"""Accuracy measurement of naive and patched evaluation against the oracle.

Each region is sampled twice: uniformly over the whole region (the stable
area) and log-uniformly in the offset from the midpoint (the decayed area,
where the naive form is at its worst). The reported metric for each area is
the maximum absolute and relative error.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import oracle
from .expr import FunctionDef, evaluate
from .repair import PatchDomainError, TaylorPatch, eval_patch

log = logging.getLogger(__name__)

METRICS = ("max_abs_stable", "max_rel_stable", "max_abs_decayed", "max_rel_decayed")
REL_METRICS = ("max_rel_stable", "max_rel_decayed")

DECAYED_SUBRADIUS = 1e-2
DECAYED_MIN_DECADE = 1e-12


@dataclass(frozen=True)
class Region:
    """A neighbourhood of ``base`` along parameter ``var``."""

    var: int
    midpoint: float
    radius: float = 0.01
    base: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("region radius must be positive")

    def point(self, value: float) -> tuple[float, ...]:
        base = list(self.base) if self.base else [0.0] * (self.var + 1)
        base[self.var] = value
        return tuple(base)

    def to_dict(self) -> dict:
        return {"var": self.var, "midpoint": self.midpoint, "radius": self.radius, "base": list(self.base)}


def sample_stable(region: Region, n: int, seed: int = 0) -> list[tuple[float, ...]]:
    """``n`` points uniform over ``[mid - r, mid + r]``; the midpoint is always first."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    lo, hi = region.midpoint - region.radius, region.midpoint + region.radius
    values = [region.midpoint] + [float(v) for v in rng.uniform(lo, hi, n - 1)]
    return [region.point(min(max(v, lo), hi)) for v in values]


def sample_decayed(region: Region, n: int, seed: int = 0) -> list[tuple[float, ...]]:
    """``n`` points whose offsets from the midpoint are log-uniform in
    ``[r * 1e-12, r * 1e-2]``, on both sides."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    r = region.radius
    lo_exp = math.log10(r * DECAYED_MIN_DECADE)
    hi_exp = math.log10(r * DECAYED_SUBRADIUS)
    # stratified so small n still spans the decades
    u = (np.arange(n) + rng.random(n)) / n
    rng.shuffle(u)
    mags = 10.0 ** (lo_exp + (hi_exp - lo_exp) * u)
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return [region.point(region.midpoint + float(s * m)) for s, m in zip(signs, mags)]


@dataclass
class EvaluationReport:
    function: str
    variant: str
    samples: dict[str, int]
    metrics: dict[str, float]
    worst: dict[str, tuple[tuple[float, ...], float]] = field(default_factory=dict)
    excluded: int = 0
    zero_truth: int = 0

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "variant": self.variant,
            "samples": dict(self.samples),
            "metrics": {k: _json_float(v) for k, v in self.metrics.items()},
            "worst": {k: {"point": list(p), "error": _json_float(e)} for k, (p, e) in self.worst.items()},
            "excluded": self.excluded,
            "zeroTruth": self.zero_truth,
        }


def _json_float(v: float):
    if math.isinf(v):
        return "inf"
    if math.isnan(v):
        return "nan"
    return v


class _Accumulator:
    def __init__(self, function: str, variant: str):
        self.report = EvaluationReport(function, variant, {"stable": 0, "decayed": 0}, {m: 0.0 for m in METRICS})

    def add(self, area: str, point, abs_err: float, rel_err: float | None):
        rep = self.report
        rep.samples[area] += 1
        for kind, err in (("abs", abs_err), ("rel", rel_err)):
            if err is None:
                continue
            key = f"max_{kind}_{area}"
            if err > rep.metrics[key] or (math.isnan(err)):
                rep.metrics[key] = math.inf if math.isnan(err) else err
                rep.worst[key] = (tuple(point), rep.metrics[key])


def measure(
    f: FunctionDef,
    patch: TaylorPatch | None,
    region: Region,
    n_stable: int = 1000,
    n_decayed: int = 1000,
    precision_bits: int = oracle.DEFAULT_PRECISION,
    seed: int = 0,
) -> tuple[EvaluationReport, EvaluationReport | None]:
    """Max abs/rel error of ``f`` (and ``patch``) on the stable and decayed areas."""
    if patch is not None and patch.var == region.var and patch.radius < region.radius:
        raise ValueError("patch validity radius is smaller than the region radius")
    naive = _Accumulator(f.name, "naive")
    patched = _Accumulator(f.name, "patched") if patch is not None else None
    areas = {
        "stable": sample_stable(region, n_stable, seed),
        "decayed": sample_decayed(region, n_decayed, seed + 1),
    }
    for area, points in areas.items():
        for p in points:
            try:
                truth = oracle.eval_extended(f, p, precision_bits)
            except oracle.OracleError as exc:
                log.warning("%s: oracle failed at %r (%s); point excluded", f.name, p, exc)
                naive.report.excluded += 1
                if patched is not None:
                    patched.report.excluded += 1
                continue
            variants = [(naive, evaluate(f, p))]
            if patched is not None:
                try:
                    variants.append((patched, eval_patch(patch, p)))
                except PatchDomainError:
                    variants.append((patched, evaluate(f, p)))
            zero = truth == 0
            for acc, approx in variants:
                abs_err = oracle.absolute_error(approx, truth, precision_bits)
                rel = None if zero else oracle.relative_error(approx, truth, precision_bits)
                if zero:
                    acc.report.zero_truth += 1
                acc.add(area, p, abs_err, rel)
    return naive.report, (patched.report if patched is not None else None)


def improvement_orders(naive: EvaluationReport, patched: EvaluationReport) -> dict[str, float]:
    """``log10(naive / patched)`` per metric; infinite when the patch is exact."""
    out = {}
    for m in METRICS:
        a, b = naive.metrics[m], patched.metrics[m]
        if math.isnan(a) or math.isnan(b) or (math.isinf(a) and math.isinf(b)):
            out[m] = math.nan
        elif b == 0.0:
            out[m] = 0.0 if a == 0.0 else math.inf
        elif a == 0.0:
            out[m] = -math.inf
        else:
            out[m] = math.log10(a / b)
    return out


def reports_to_csv(reports: Sequence[EvaluationReport]) -> str:
    """One row per function x variant x metric."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["function", "variant", "metric", "value"])
    for rep in reports:
        for m in METRICS:
            writer.writerow([rep.function, rep.variant, m, repr(rep.metrics[m])])
    return buf.getvalue()
