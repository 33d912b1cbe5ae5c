"""Error detection and repairability classification, all in working precision.

Atomic condition numbers along an evaluation trace locate inputs that trigger
large errors; the condition number of the whole function (forward
differences, no symbolic work, no extended precision) then decides whether
the error can be repaired without raising the precision.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import DerivativeUnavailable, finite_diff
from .expr import EvalTrace, FunctionDef, Interval, eval_working, evaluate

log = logging.getLogger(__name__)

THETA_ATOMIC = 1e5
THETA_FUNC = 1e5
PROBE_OFFSET = 1e-5
# step floor for condition numbers; reproduces the classic |x f'(x)/f(x)|
# example value at x=2.13 digit for digit
GAMMA_STEP = 1e-5
REFINE_ITERATIONS = 64
UNFLAGGED_SEEDS = 2


class ConditionUndefined(ArithmeticError):
    """The function value is zero (or not finite) where a condition number was requested."""


class ClassificationInconclusive(ArithmeticError):
    pass


class Label(str, enum.Enum):
    NO_SIGNIFICANT_ERROR = "NoSignificantError"
    ORIGINAL_PRECISION_REPAIRABLE = "OriginalPrecisionRepairable"
    REQUIRES_HIGH_PRECISION = "RequiresHighPrecision"


@dataclass(frozen=True)
class AtomicConditionRecord:
    node_id: int
    op: str
    conditions: tuple[float, ...]

    @property
    def max(self) -> float:
        return max(self.conditions) if self.conditions else 0.0


@dataclass(frozen=True)
class ConditionProfile:
    point: tuple[float, ...]
    gammas: tuple[float, ...]
    max_atomic: float
    observed_rel_error: float | None = None


@dataclass(frozen=True)
class Classification:
    label: Label
    point: tuple[float, ...]
    probe: tuple[float, ...]
    gammas: tuple[float, ...]
    max_atomic: float
    max_atomic_node: int | None
    theta_atomic: float
    theta_func: float

    @property
    def profile(self) -> ConditionProfile:
        return ConditionProfile(self.point, self.gammas, self.max_atomic)

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "probe": list(self.probe),
            "gamma": list(self.gammas),
            "maxAtomic": self.max_atomic,
            "maxAtomicNode": self.max_atomic_node,
            "label": self.label.value,
            "thresholds": {"thetaAtomic": self.theta_atomic, "thetaFunc": self.theta_func},
        }


def _ratio(num: float, den: float) -> float:
    num, den = abs(num), abs(den)
    if math.isnan(num) or math.isnan(den):
        return math.inf
    if den == 0.0:
        # 0/0 only arises at removable points (sin(0)/0 and friends), where
        # the limit of every formula below is 1
        return 1.0 if num == 0.0 else math.inf
    if math.isinf(num) and math.isinf(den):
        return math.inf
    return num / den


def _atomic(op: str, operands: tuple[float, ...]) -> tuple[float, ...]:
    if op in ("add", "sub"):
        u, v = operands
        s = u + v if op == "add" else u - v
        if u == 0.0 and v == 0.0:
            return (0.0, 0.0)
        return (_ratio(u, s), _ratio(v, s))
    if op in ("mul", "div"):
        return (1.0, 1.0)
    u = operands[0]
    if op == "neg":
        return (1.0,)
    if op == "sin":
        return (_ratio(u * math.cos(u), math.sin(u)),) if math.isfinite(u) else (math.inf,)
    if op == "cos":
        return (_ratio(u * math.sin(u), math.cos(u)),) if math.isfinite(u) else (math.inf,)
    if op == "tan":
        return (_ratio(u, math.sin(u) * math.cos(u)),) if math.isfinite(u) else (math.inf,)
    if op == "exp":
        return (abs(u),)
    if op == "log":
        if u <= 0.0:
            return (math.inf,)
        return (_ratio(1.0, math.log(u)),)
    if op == "sqrt":
        return (0.5,)
    if op == "pow":
        u, v = operands
        if u <= 0.0:
            return (abs(v), math.inf if u < 0.0 else 0.0)
        return (abs(v), abs(v * math.log(u)))
    if op in ("asin", "acos"):
        if abs(u) >= 1.0:
            return (math.inf,)
        inv = math.asin(u) if op == "asin" else math.acos(u)
        return (_ratio(u, math.sqrt(1.0 - u * u) * inv),)
    if op == "atan":
        return (_ratio(u, (1.0 + u * u) * math.atan(u)),)
    raise ValueError(f"unknown op {op!r}")


def atomic_conditions(trace: EvalTrace) -> list[AtomicConditionRecord]:
    """Condition number of each traced operation with respect to each operand."""
    out = []
    for rec in trace.records:
        if rec.op == "pow":
            conds = _atomic("pow", rec.operands)
        else:
            conds = _atomic(rec.op, rec.operands)
        out.append(AtomicConditionRecord(rec.node_id, rec.op, conds))
    return out


def max_atomic_condition(f: FunctionDef, point: Sequence[float]) -> tuple[float, int | None]:
    """Largest atomic condition over the trace at ``point`` and the node holding it."""
    _, trace = eval_working(f, point)
    best, node = 0.0, None
    for rec in atomic_conditions(trace):
        m = rec.max
        if m > best or node is None:
            best, node = m, rec.node_id
    return best, node


def condition_step(x: float) -> float:
    """Forward-difference step for condition numbers.

    Coarser than the derivative default: f is often itself a cancelled
    quantity near flagged inputs, and a step near sqrt(eps) would then
    measure rounding noise. Only the order of magnitude of the condition
    number matters for the label.
    """
    return max(GAMMA_STEP, abs(x) * 2.0**-26)


def function_condition(f: FunctionDef, point: Sequence[float], var: int, h: float | None = None) -> float:
    """``|x_var * df/dx_var / f|`` with a forward-difference derivative."""
    point = [float(v) for v in point]
    if h is None:
        h = condition_step(point[var])
    fx = evaluate(f, point)
    if fx == 0.0 or not math.isfinite(fx):
        raise ConditionUndefined(
            f"condition of {f.name} undefined at {point} (f={fx!r}); probe a nearby point"
        )
    try:
        d = finite_diff(f, point, var, h)
    except DerivativeUnavailable as exc:
        raise ConditionUndefined(str(exc)) from exc
    return abs(point[var] * d / fx)


def _probe_point(f: FunctionDef, point: Sequence[float], offset: float) -> tuple[float, ...]:
    probe = []
    for x, spec in zip(point, f.params):
        cand = x + offset
        # stay inside the domain, including the forward-difference step
        if cand not in spec.domain or cand + condition_step(cand) not in spec.domain:
            cand = x - offset
        probe.append(cand)
    return tuple(probe)


def classify(
    f: FunctionDef,
    point: Sequence[float],
    theta_atomic: float = THETA_ATOMIC,
    theta_func: float = THETA_FUNC,
    probe_offset: float = PROBE_OFFSET,
) -> Classification:
    """Label an input as free of significant error, repairable in working
    precision, or needing higher precision.

    The atomic conditions are taken at ``point`` itself; the per-parameter
    function condition numbers at a probe shifted by ``probe_offset`` along
    every coordinate, since the exact peak is often a root of ``f``.
    """
    point = tuple(float(v) for v in point)
    max_atomic, node = max_atomic_condition(f, point)
    probe = _probe_point(f, point, probe_offset)
    try:
        gammas = tuple(function_condition(f, probe, i) for i in range(f.arity))
    except ConditionUndefined:
        if max_atomic < theta_atomic:
            gammas = ()
        else:
            raise ClassificationInconclusive(
                f"{f.name} vanishes at probe {probe}; retry with a larger probe offset"
            ) from None
    if max_atomic < theta_atomic:
        label = Label.NO_SIGNIFICANT_ERROR
    elif max(gammas, default=0.0) <= theta_func:
        label = Label.ORIGINAL_PRECISION_REPAIRABLE
    else:
        label = Label.REQUIRES_HIGH_PRECISION
    return Classification(label, point, probe, gammas, max_atomic, node, theta_atomic, theta_func)


@dataclass(frozen=True)
class Finding:
    point: tuple[float, ...]
    max_atomic: float
    node_id: int | None = None

    def to_dict(self) -> dict:
        return {"point": list(self.point), "maxAtomic": self.max_atomic, "node": self.node_id}


def _sample_coordinate(rng: np.random.Generator, interval: Interval, n: int) -> np.ndarray:
    lo, hi = interval.lo, interval.hi
    if lo == hi:
        return np.full(n, lo)
    uniform = rng.uniform(lo, hi, n)
    # the other half of the budget is stratified over decades of magnitude
    top = max(abs(lo), abs(hi))
    if lo > 0.0:
        m_lo, m_hi, signs = lo, hi, np.ones(n)
    elif hi < 0.0:
        m_lo, m_hi, signs = -hi, -lo, -np.ones(n)
    else:
        m_lo, m_hi = top * 1e-16, top
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        if lo == 0.0:
            signs = np.ones(n)
        elif hi == 0.0:
            signs = -np.ones(n)
    e_lo, e_hi = math.log10(m_lo), math.log10(m_hi)
    strata = (np.arange(n) + rng.random(n)) / n
    rng.shuffle(strata)
    logmag = signs * 10.0 ** (e_lo + (e_hi - e_lo) * strata)
    pick = rng.random(n) < 0.5
    values = np.where(pick, logmag, uniform)
    return np.clip(values, lo, hi)


def _box(f: FunctionDef, box: Sequence[Interval] | None) -> list[Interval]:
    intervals = list(box) if box is not None else [p.domain for p in f.params]
    if len(intervals) != f.arity:
        raise ValueError("search box must give one interval per parameter")
    for name, iv in zip(f.param_names, intervals):
        if not iv.bounded:
            raise ValueError(f"parameter {name} has an unbounded domain; pass a search box")
    return intervals


def _score(f: FunctionDef, point: Sequence[float]) -> tuple[float, int | None]:
    value, trace = eval_working(f, point)
    if not math.isfinite(value):
        # domain violations are not rounding errors
        return 0.0, None
    best, node = 0.0, None
    for rec in atomic_conditions(trace):
        if rec.max > best:
            best, node = rec.max, rec.node_id
    return best, node


def _golden_max(g, a: float, b: float, iterations: int) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(iterations):
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - invphi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + invphi * (b - a)
            gd = g(d)
    return c if gc >= gd else d


def _refine(f: FunctionDef, start: tuple[float, ...], box: list[Interval], iterations: int) -> Finding:
    best = list(start)
    best_score, best_node = _score(f, best)
    for i, iv in enumerate(box):
        width = (iv.hi - iv.lo) * 0.01
        x0 = best[i]
        candidates = []
        # search both in linear and, away from zero, in log-magnitude space
        a, b = max(iv.lo, x0 - width), min(iv.hi, x0 + width)
        if b > a:
            def g_lin(x, i=i):
                p = list(best)
                p[i] = x
                return _score(f, p)[0]

            candidates.append(_golden_max(g_lin, a, b, iterations))
        if x0 != 0.0:
            sign = math.copysign(1.0, x0)
            lo_mag = abs(x0) * 1e-3
            hi_mag = abs(x0) * 1e3

            def g_log(t, i=i, sign=sign):
                p = list(best)
                x = sign * 10.0**t
                if x not in iv:
                    return -1.0
                p[i] = x
                return _score(f, p)[0]

            t = _golden_max(g_log, math.log10(lo_mag), math.log10(hi_mag), iterations)
            cand = sign * 10.0**t
            if cand in iv:
                candidates.append(cand)
        for x in candidates:
            p = list(best)
            p[i] = x
            s, node = _score(f, p)
            if s > best_score:
                best, best_score, best_node = p, s, node
    return Finding(tuple(best), best_score, best_node)


def search_error_inputs(
    f: FunctionDef,
    budget: int = 2000,
    seed: int = 0,
    box: Sequence[Interval] | None = None,
    theta_atomic: float = THETA_ATOMIC,
    refine_iterations: int = REFINE_ITERATIONS,
    max_clusters: int = 8,
    n_jobs: int = 1,
) -> list[Finding]:
    """Random search for inputs whose evaluation trips a large atomic condition.

    The sample set is drawn up front from ``seed``, so the result does not
    depend on ``n_jobs``.
    """
    if budget <= 0:
        raise ValueError("search budget must be positive")
    intervals = _box(f, box)
    rng = np.random.default_rng(seed)
    columns = [_sample_coordinate(rng, iv, budget) for iv in intervals]
    points = [tuple(float(c[k]) for c in columns) for k in range(budget)]

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            scores = list(pool.map(lambda p: _score(f, p), points))
    else:
        scores = [_score(f, p) for p in points]

    # every sample is ranked; the best ones below the threshold are refined
    # too, since a narrow spike (sin near pi) is easy to miss by sampling
    ranked = sorted(((s, k) for k, (s, _) in enumerate(scores) if s > 0.0), key=lambda t: (-t[0], t[1]))
    n_flagged = sum(1 for s, _ in ranked if s >= theta_atomic)

    widths = [iv.hi - iv.lo for iv in intervals]
    seeds: list[tuple[float, ...]] = []
    extra = 0
    for s, k in ranked:
        if len(seeds) >= max_clusters or (s < theta_atomic and extra >= UNFLAGGED_SEEDS):
            break
        p = points[k]
        if not any(_close(p, q, widths) for q in seeds):
            seeds.append(p)
            extra += s < theta_atomic

    if n_jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            found = list(pool.map(lambda p: _refine(f, p, intervals, refine_iterations), seeds))
    else:
        found = [_refine(f, p, intervals, refine_iterations) for p in seeds]
    found = [r for r in found if r.max_atomic >= theta_atomic]
    log.debug("%s: %d of %d samples flagged, %d peaks after refinement", f.name, n_flagged, budget, len(found))
    found.sort(key=lambda r: (-r.max_atomic, r.point))
    # distinct seeds can refine onto the same peak
    unique: list[Finding] = []
    for r in found:
        if not any(_close(r.point, u.point, widths) for u in unique):
            unique.append(r)
    return unique


def _close(p, q, widths) -> bool:
    return all(abs(a - b) <= 0.01 * w for a, b, w in zip(p, q, widths))
