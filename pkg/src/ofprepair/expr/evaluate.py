"""Working-precision (binary64) evaluation.

Python floats are IEEE 754 binary64 with round-to-nearest-even and CPython
never contracts ``a*b + c`` into a fused multiply-add, so evaluating the tree
strictly left to right here is bit-reproducible across platforms. The one
documented exception is ``pow`` with a non-integer exponent, which goes
through the platform ``pow`` and may differ by an ulp between C libraries.

Domain violations never raise: they produce the IEEE NaN/Inf result and mark
the trace as flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .ast import Constant, Expr, FunctionDef, Param, Unary

INF = math.inf
NAN = math.nan


def _div(a: float, b: float) -> float:
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0.0 or math.isnan(a):
            return NAN
        return math.copysign(INF, a) * math.copysign(1.0, b)


def _log(a: float) -> float:
    if a > 0.0:
        return math.log(a) if a != INF else INF
    if a == 0.0:
        return -INF
    return NAN


def _sqrt(a: float) -> float:
    if a >= 0.0:
        return math.sqrt(a)
    return NAN


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return INF


def _guard(fn: Callable[[float], float]) -> Callable[[float], float]:
    def wrapped(a: float) -> float:
        try:
            return fn(a)
        except ValueError:
            return NAN
        except OverflowError:
            return INF

    wrapped.__name__ = fn.__name__
    return wrapped


def _pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except ZeroDivisionError:
        # 0 ** negative; odd integer exponents keep the sign of zero
        odd = b.is_integer() and int(b) % 2 == 1
        return math.copysign(INF, a) if odd else INF
    except ValueError:
        return NAN
    except OverflowError:
        if a < 0 and b.is_integer() and int(b) % 2 == 1:
            return -INF
        return INF


UNARY_FUNCS: dict[str, Callable[[float], float]] = {
    "neg": lambda a: -a,
    "sin": _guard(math.sin),
    "cos": _guard(math.cos),
    "tan": _guard(math.tan),
    "asin": _guard(math.asin),
    "acos": _guard(math.acos),
    "atan": _guard(math.atan),
    "exp": _exp,
    "log": _log,
    "sqrt": _sqrt,
}

BINARY_FUNCS: dict[str, Callable[[float, float], float]] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _div,
    "pow": _pow,
}


@dataclass(frozen=True)
class TraceRecord:
    node_id: int
    op: str
    operands: tuple[float, ...]
    result: float

    @property
    def exceptional(self) -> bool:
        """Produced a NaN/Inf from finite operands."""
        return not math.isfinite(self.result) and all(math.isfinite(v) for v in self.operands)


@dataclass(frozen=True)
class EvalTrace:
    records: tuple[TraceRecord, ...]
    value: float

    @property
    def flagged(self) -> bool:
        return any(not math.isfinite(r.result) for r in self.records) or not math.isfinite(self.value)

    def __len__(self) -> int:
        return len(self.records)

    def replay(self) -> float:
        """Recompute the final result from the recorded operations alone."""
        if not self.records:
            return self.value
        results: dict[int, float] = {}
        for rec in self.records:
            fn = UNARY_FUNCS.get(rec.op) or BINARY_FUNCS[rec.op]
            results[rec.node_id] = fn(*rec.operands)
        return results[self.records[-1].node_id]


def _check_point(f: FunctionDef, point: Sequence[float]) -> tuple[float, ...]:
    if len(point) != f.arity:
        raise ValueError(f"{f.name} takes {f.arity} argument(s), got {len(point)}")
    values = tuple(float(v) for v in point)
    for name, v in zip(f.param_names, values):
        if not math.isfinite(v):
            raise ValueError(f"argument {name}={v!r} is not finite")
    return values


def eval_working(f: FunctionDef, point: Sequence[float]) -> tuple[float, EvalTrace]:
    """Evaluate ``f`` at ``point`` in binary64, recording every operation."""
    args = _check_point(f, point)
    records: list[TraceRecord] = []
    counter = 0

    # recursive post-order walk; ids match FunctionDef.nodes()
    def walk(node: Expr) -> float:
        nonlocal counter
        if isinstance(node, Constant):
            counter += 1
            return node.value
        if isinstance(node, Param):
            counter += 1
            return args[node.index]
        if isinstance(node, Unary):
            a = walk(node.child)
            result = UNARY_FUNCS[node.op](a)
            operands = (a,)
        else:
            a = walk(node.left)
            b = walk(node.right)
            result = BINARY_FUNCS[node.op](a, b)
            operands = (a, b)
        records.append(TraceRecord(counter, node.op, operands, result))
        counter += 1
        return result

    value = walk(f.body)
    return value, EvalTrace(tuple(records), value)


def compile_expr(expr: Expr) -> Callable[[Sequence[float]], float]:
    """Compile to a closure with the same semantics as :func:`eval_working`, minus the trace."""
    if isinstance(expr, Constant):
        value = expr.value
        return lambda args: value
    if isinstance(expr, Param):
        index = expr.index
        return lambda args: args[index]
    if isinstance(expr, Unary):
        fn = UNARY_FUNCS[expr.op]
        child = compile_expr(expr.child)
        return lambda args: fn(child(args))
    fn2 = BINARY_FUNCS[expr.op]
    left = compile_expr(expr.left)
    right = compile_expr(expr.right)
    return lambda args: fn2(left(args), right(args))


_COMPILED: dict[int, tuple[Expr, Callable]] = {}


def evaluate(f: FunctionDef, point: Sequence[float]) -> float:
    """Value-only binary64 evaluation, bit-identical to :func:`eval_working`."""
    args = _check_point(f, point)
    key = id(f.body)
    cached = _COMPILED.get(key)
    if cached is None or cached[0] is not f.body:
        if len(_COMPILED) > 4096:
            _COMPILED.clear()
        cached = (f.body, compile_expr(f.body))
        _COMPILED[key] = cached
    return cached[1](args)
