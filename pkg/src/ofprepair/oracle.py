"""Extended-precision reference evaluation, used only to measure errors.

Nothing under :mod:`ofprepair.detect` or :mod:`ofprepair.repair` may import
this module; the test suite checks that.
"""

from __future__ import annotations

import math
import threading
from typing import Sequence

import mpmath

from .expr import Constant, Expr, FunctionDef, Param, Unary, format_float

DEFAULT_PRECISION = 256
GUARD_BITS = 32
MAX_GUARD_BITS = 4096

BINARY64 = "binary64"
DECIMAL = "decimal"

BigFloat = mpmath.mpf

_local = threading.local()


class OracleError(ArithmeticError):
    """The reference value is undefined (domain violation, pole, overflow to infinity)."""


def _context(precision_bits: int) -> mpmath.ctx_mp.MPContext:
    # mpmath's global context is shared mutable state; keep one per thread
    ctx = getattr(_local, "ctx", None)
    if ctx is None:
        ctx = _local.ctx = mpmath.MPContext()
    ctx.prec = precision_bits
    return ctx


def _real(ctx, value):
    if isinstance(value, ctx.mpc) or not isinstance(value, ctx.mpf):
        raise OracleError("result is not real")
    if not ctx.isfinite(value):
        raise OracleError("result is not finite")
    return value


def _evaluate(ctx, node: Expr, args: list, interpretation: str):
    if isinstance(node, Constant):
        return ctx.mpf(node.text) if interpretation == DECIMAL else ctx.mpf(node.value)
    if isinstance(node, Param):
        return args[node.index]
    if isinstance(node, Unary):
        a = _evaluate(ctx, node.child, args, interpretation)
        op = node.op
        if op == "neg":
            return -a
        if op == "log" and a <= 0:
            raise OracleError(f"log of non-positive value {a}")
        if op == "sqrt" and a < 0:
            raise OracleError(f"sqrt of negative value {a}")
        if op in ("asin", "acos") and abs(a) > 1:
            raise OracleError(f"{op} argument {a} outside [-1, 1]")
        return _real(ctx, getattr(ctx, op)(a))
    a = _evaluate(ctx, node.left, args, interpretation)
    b = _evaluate(ctx, node.right, args, interpretation)
    op = node.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0:
            raise OracleError("division by zero")
        return a / b
    if a == 0 and b < 0:
        raise OracleError("zero to a negative power")
    if a < 0 and not ctx.isint(b):
        raise OracleError("negative base with non-integer exponent")
    return _real(ctx, ctx.power(a, b))


def eval_extended(
    f: FunctionDef,
    point: Sequence,
    precision_bits: int = DEFAULT_PRECISION,
    interpretation: str = BINARY64,
) -> mpmath.mpf:
    """Evaluate ``f`` and return the result correct to about ``precision_bits`` bits.

    Intermediates carry guard bits beyond ``precision_bits``, doubled until
    two evaluations agree, so cancellation inside ``f`` does not eat into the
    requested accuracy.

    With ``interpretation="binary64"`` (default) inputs and literals are taken
    as their exact binary64 values. With ``"decimal"`` each input is read as
    the decimal it prints as (or the string given) and literals as their
    source text, which is what a person writing ``3.14159265358973`` means.
    """
    if precision_bits < 128:
        raise ValueError("oracle precision must be at least 128 bits")
    if interpretation not in (BINARY64, DECIMAL):
        raise ValueError(f"unknown input interpretation {interpretation!r}")
    if len(point) != f.arity:
        raise ValueError(f"{f.name} takes {f.arity} argument(s), got {len(point)}")
    # cancellation inside f costs the oracle bits too; add guard bits until
    # two evaluations agree to the requested precision (Ziv's strategy)
    guard = GUARD_BITS
    previous = _at(f, point, precision_bits + guard, interpretation)
    while True:
        guard *= 2
        current = _at(f, point, precision_bits + guard, interpretation)
        if _agree(previous, current, precision_bits) or guard >= MAX_GUARD_BITS:
            break
        previous = current
    # hand back a value in the global context type, rounded to the precision asked for
    with mpmath.workprec(precision_bits):
        return +mpmath.mpf(current)


def _at(f: FunctionDef, point: Sequence, bits: int, interpretation: str):
    ctx = _context(bits)
    args = []
    for v in point:
        if isinstance(v, str):
            args.append(ctx.mpf(v))
        elif interpretation == DECIMAL:
            args.append(ctx.mpf(format_float(float(v))))
        else:
            args.append(ctx.mpf(float(v)) if not isinstance(v, mpmath.mpf) else ctx.mpf(v))
    result = _evaluate(ctx, f.body, args, interpretation)
    with mpmath.workprec(bits):
        return mpmath.mpf(result)


def _agree(a, b, bits: int) -> bool:
    if a == b:
        return True
    with mpmath.workprec(bits + 8):
        return abs(a - b) <= abs(b) * mpmath.mpf(2) ** -(bits + 1)


class AbsoluteError(float):
    """An error value measured as ``|approx - truth|`` because the truth is zero."""

    absolute = True


def relative_error(approx: float, truth, precision_bits: int = DEFAULT_PRECISION) -> float:
    """``|approx - truth| / |truth|`` in extended precision, rounded to binary64.

    When ``truth`` is zero the absolute error is returned as an
    :class:`AbsoluteError` so callers can tell the two apart.
    """
    with mpmath.workprec(precision_bits):
        t = mpmath.mpf(truth)
        if math.isnan(approx):
            return math.nan
        if math.isinf(approx):
            return math.inf
        diff = abs(mpmath.mpf(approx) - t)
        if t == 0:
            return AbsoluteError(float(diff))
        return float(diff / abs(t))


def absolute_error(approx: float, truth, precision_bits: int = DEFAULT_PRECISION) -> float:
    with mpmath.workprec(precision_bits):
        if not math.isfinite(approx):
            return math.inf
        return float(abs(mpmath.mpf(approx) - mpmath.mpf(truth)))
