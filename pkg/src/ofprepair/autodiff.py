"""Symbolic differentiation with a conservative simplifier, and forward differences.

``simplify`` only applies rewrites that are exact over the reals. Constant
folding is done in binary64 but only kept when the binary64 result is the
exact real result (``2*3`` folds, ``1/3`` does not), so the simplified tree
denotes the same real function as the input. It does not promise to keep the
binary64 rounding of the original tree.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

from .expr import (
    Binary,
    Constant,
    Expr,
    FunctionDef,
    Param,
    Unary,
    evaluate,
    tree_size,
)

DEFAULT_NODE_CAP = 50_000
_REL_STEP = 2.0**-26  # about sqrt(eps): balances truncation against rounding


class DerivativeError(ArithmeticError):
    pass


class NodeCapExceeded(DerivativeError):
    def __init__(self, size: int, cap: int, order: int):
        self.size = size
        self.cap = cap
        self.order = order
        super().__init__(f"derivative of order {order} has {size} nodes, over the cap of {cap}")


class DerivativeUnavailable(DerivativeError):
    pass


ZERO = Constant(0.0)
ONE = Constant(1.0)
TWO = Constant(2.0)


def _is_const(e: Expr, value: float | None = None) -> bool:
    if not isinstance(e, Constant):
        return False
    return value is None or e.value == value


def _exact(result: float, exact: Fraction) -> bool:
    return math.isfinite(result) and Fraction(result) == exact


def _fold_binary(op: str, a: float, b: float) -> float | None:
    fa, fb = Fraction(a), Fraction(b)
    if op == "add":
        r = a + b
        return r if _exact(r, fa + fb) else None
    if op == "sub":
        r = a - b
        return r if _exact(r, fa - fb) else None
    if op == "mul":
        r = a * b
        return r if _exact(r, fa * fb) else None
    if op == "div":
        if b == 0.0:
            return None
        r = a / b
        return r if _exact(r, fa / fb) else None
    if op == "pow":
        if not b.is_integer() or abs(b) > 64 or (a == 0.0 and b < 0):
            return None
        exact = fa ** int(b)
        try:
            r = math.pow(a, b)
        except (OverflowError, ValueError):
            return None
        return r if _exact(r, exact) else None
    return None


def _fold_unary(op: str, a: float) -> float | None:
    if op == "neg":
        return -a
    if a == 0.0 and op in ("sin", "tan", "asin", "atan", "sqrt"):
        return a
    if a == 0.0 and op in ("cos", "exp"):
        return 1.0
    if a == 1.0 and op == "log":
        return 0.0
    if a == 1.0 and op == "acos":
        return 0.0
    if op == "sqrt" and a > 0.0:
        r = math.sqrt(a)
        return r if Fraction(r) ** 2 == Fraction(a) else None
    return None


def _simplify_node(e: Expr) -> Expr:
    """One rewrite at the root, assuming children are already simplified."""
    if isinstance(e, Unary):
        c = e.child
        if isinstance(c, Constant):
            folded = _fold_unary(e.op, c.value)
            if folded is not None:
                return Constant(folded)
        if e.op == "neg":
            if isinstance(c, Unary) and c.op == "neg":
                return c.child
            if isinstance(c, Binary) and c.op == "mul" and isinstance(c.left, Constant):
                return Binary("mul", Constant(-c.left.value), c.right)
        return e
    if not isinstance(e, Binary):
        return e
    op, a, b = e.op, e.left, e.right
    if isinstance(a, Constant) and isinstance(b, Constant):
        folded = _fold_binary(op, a.value, b.value)
        if folded is not None:
            return Constant(folded)
    if op == "add":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return b
        if isinstance(b, Unary) and b.op == "neg":
            return _simplify_node(Binary("sub", a, b.child))
    elif op == "sub":
        if _is_const(b, 0.0):
            return a
        if a == b:
            return ZERO
        if _is_const(a, 0.0):
            return _simplify_node(Unary("neg", b))
        if isinstance(b, Unary) and b.op == "neg":
            return _simplify_node(Binary("add", a, b.child))
    elif op == "mul":
        if _is_const(a, 0.0) or _is_const(b, 0.0):
            return ZERO
        if _is_const(b, 1.0):
            return a
        if _is_const(a, 1.0):
            return b
        if _is_const(a, -1.0):
            return _simplify_node(Unary("neg", b))
        if _is_const(b, -1.0):
            return _simplify_node(Unary("neg", a))
        # constants move left so nested constant factors can merge
        if isinstance(b, Constant) and not isinstance(a, Constant):
            return _simplify_node(Binary("mul", b, a))
        if isinstance(a, Constant) and isinstance(b, Binary) and b.op == "mul" and isinstance(b.left, Constant):
            folded = _fold_binary("mul", a.value, b.left.value)
            if folded is not None:
                return _simplify_node(Binary("mul", Constant(folded), b.right))
        if isinstance(a, Unary) and a.op == "neg":
            return _simplify_node(Unary("neg", _simplify_node(Binary("mul", a.child, b))))
        if isinstance(b, Unary) and b.op == "neg":
            return _simplify_node(Unary("neg", _simplify_node(Binary("mul", a, b.child))))
    elif op == "div":
        if _is_const(a, 0.0) and not _is_const(b, 0.0):
            return ZERO
        if _is_const(b, 1.0):
            return a
        if isinstance(a, Unary) and a.op == "neg":
            return _simplify_node(Unary("neg", _simplify_node(Binary("div", a.child, b))))
    elif op == "pow":
        if _is_const(b, 1.0):
            return a
        if _is_const(b, 0.0):
            return ONE
        if isinstance(b, Constant):
            k = b.value
            if isinstance(a, Binary) and a.op == "mul" and isinstance(a.left, Constant):
                c = a.left.value
                if c > 0.0 or k.is_integer():
                    folded = _fold_binary("pow", c, k) if k.is_integer() else _fold_sqrt_power(c, k)
                    if folded is not None:
                        return _simplify_node(
                            Binary("mul", Constant(folded), _simplify_node(Binary("pow", a.right, b)))
                        )
            if isinstance(a, Binary) and a.op == "pow" and isinstance(a.right, Constant):
                inner = a.right.value
                # (u^a)^k = u^(a k) when k is an integer, or when a is not
                # (a non-integer power already forces u >= 0)
                if k.is_integer() or not inner.is_integer():
                    folded = _fold_binary("mul", inner, k)
                    if folded is not None:
                        return _simplify_node(Binary("pow", a.left, Constant(folded)))
    return e


def _fold_sqrt_power(c: float, k: float) -> float | None:
    """``c**k`` for a half-integer ``k`` when the result is exact."""
    if not (2 * k).is_integer():
        return None
    root = _fold_unary("sqrt", c)
    if root is None:
        return None
    return _fold_binary("pow", root, 2 * k)


def simplify(e: Expr) -> Expr:
    """Bottom-up rewriting to a fixpoint with the exact rule set above."""
    memo: dict[int, Expr] = {}

    def walk(node: Expr) -> Expr:
        key = id(node)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if isinstance(node, Unary):
            child = walk(node.child)
            rebuilt = node if child is node.child else Unary(node.op, child)
        elif isinstance(node, Binary):
            left, right = walk(node.left), walk(node.right)
            rebuilt = node if (left is node.left and right is node.right) else Binary(node.op, left, right)
        else:
            rebuilt = node
        out = _simplify_node(rebuilt)
        if isinstance(out, Constant) and out.value == 0.0 and math.copysign(1.0, out.value) < 0:
            out = ZERO  # signed zeros are the same real number
        memo[key] = out
        return out

    # every rewrite shrinks the tree or folds constants, so this terminates
    current = e
    while True:
        memo.clear()
        nxt = walk(current)
        if nxt == current:
            return nxt
        current = nxt


def _neg(e: Expr) -> Expr:
    return Unary("neg", e)


def _mul(a: Expr, b: Expr) -> Expr:
    return Binary("mul", a, b)


def _depends(e: Expr, var: int, cache: dict[int, bool]) -> bool:
    key = id(e)
    if key not in cache:
        if isinstance(e, Param):
            cache[key] = e.index == var
        elif isinstance(e, Constant):
            cache[key] = False
        else:
            cache[key] = any(_depends(c, var, cache) for c in e.children)
    return cache[key]


def diff_expr(e: Expr, var: int) -> Expr:
    """Unsimplified derivative of ``e`` with respect to parameter ``var``."""
    deps: dict[int, bool] = {}
    memo: dict[int, Expr] = {}

    def d(node: Expr) -> Expr:
        if not _depends(node, var, deps):
            return ZERO
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Param):
            out: Expr = ONE
        elif isinstance(node, Unary):
            u = node.child
            du = d(u)
            op = node.op
            if op == "neg":
                out = _neg(du)
            elif op == "sin":
                out = _mul(Unary("cos", u), du)
            elif op == "cos":
                out = _mul(_neg(Unary("sin", u)), du)
            elif op == "tan":
                out = _mul(du, Binary("pow", Unary("cos", u), Constant(-2.0)))
            elif op == "exp":
                out = _mul(node, du)
            elif op == "log":
                out = Binary("div", du, u)
            elif op == "sqrt":
                out = Binary("div", du, _mul(TWO, node))
            elif op in ("asin", "acos"):
                root = Binary("pow", Binary("sub", ONE, Binary("pow", u, TWO)), Constant(-0.5))
                out = _mul(du, root)
                if op == "acos":
                    out = _neg(out)
            elif op == "atan":
                out = _mul(du, Binary("pow", Binary("add", ONE, Binary("pow", u, TWO)), Constant(-1.0)))
            else:  # pragma: no cover - closed op set
                raise DerivativeError(f"cannot differentiate {op}")
        else:
            u, v = node.left, node.right
            op = node.op
            if op in ("add", "sub"):
                out = Binary(op, d(u), d(v))
            elif op == "mul":
                out = Binary("add", _mul(d(u), v), _mul(u, d(v)))
            elif op == "div":
                # d(u/v) = u'/v - u * v' * v^-2; keeps repeated derivatives compact
                dv = d(v)
                out = Binary("div", d(u), v)
                if _depends(v, var, deps):
                    out = Binary("sub", out, _mul(u, _mul(dv, Binary("pow", v, Constant(-2.0)))))
            elif op == "pow":
                if not _depends(v, var, deps):
                    out = _mul(_mul(v, Binary("pow", u, Binary("sub", v, ONE))), d(u))
                else:
                    inner = Binary(
                        "add",
                        _mul(d(v), Unary("log", u)),
                        _mul(v, Binary("div", d(u), u)),
                    )
                    out = _mul(node, inner)
            else:  # pragma: no cover
                raise DerivativeError(f"cannot differentiate {op}")
        memo[key] = out
        return out

    return d(e)


def power_form(e: Expr) -> Expr:
    """Rewrite ``sqrt(u)`` as ``u^0.5`` and ``a/b`` as ``a * b^-1``.

    Repeated differentiation of power form uses the power rule instead of the
    quotient rule, which keeps higher derivatives small.
    """
    memo: dict[int, Expr] = {}

    def walk(node: Expr) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Unary):
            child = walk(node.child)
            out: Expr = Binary("pow", child, Constant(0.5)) if node.op == "sqrt" else Unary(node.op, child)
        elif isinstance(node, Binary):
            left, right = walk(node.left), walk(node.right)
            if node.op == "div":
                inv = Binary("pow", right, Constant(-1.0))
                out = inv if _is_const(left, 1.0) else Binary("mul", left, inv)
            else:
                out = Binary(node.op, left, right)
        else:
            out = node
        memo[key] = out
        return out

    return simplify(walk(e))


def derivative_expr(e: Expr, var: int) -> Expr:
    return simplify(diff_expr(e, var))


def differentiate(f: FunctionDef, var: int) -> FunctionDef:
    """Exact symbolic derivative of ``f`` with respect to parameter ``var``."""
    if not 0 <= var < f.arity:
        raise ValueError(f"parameter index {var} out of range for {f.name}")
    return f.with_body(derivative_expr(f.body, var), name=f"d_{f.name}_d_{f.params[var].name}")


def nth_derivative_exprs(
    e: Expr, var: int, n: int, node_cap: int = DEFAULT_NODE_CAP
) -> list[Expr]:
    """``[e, e', e'', ..., e^(n)]``, simplified after every step.

    Raises :class:`NodeCapExceeded` as soon as one derivative grows past
    ``node_cap`` nodes; the exception carries the order that failed so callers
    can fall back to the derivatives already computed.
    """
    out = [simplify(e)]
    for k in range(1, n + 1):
        prev = out[-1] if k == 1 else power_form(out[-1])
        nxt = derivative_expr(prev, var)
        size = tree_size(nxt)
        if size > node_cap:
            exc = NodeCapExceeded(size, node_cap, k)
            exc.partial = out
            raise exc
        out.append(nxt)
    return out


def nth_derivative(f: FunctionDef, var: int, n: int, node_cap: int = DEFAULT_NODE_CAP) -> FunctionDef:
    if n < 1:
        raise ValueError("derivative order must be >= 1")
    if not 0 <= var < f.arity:
        raise ValueError(f"parameter index {var} out of range for {f.name}")
    body = nth_derivative_exprs(f.body, var, n, node_cap)[-1]
    return f.with_body(body, name=f"d{n}_{f.name}_d_{f.params[var].name}")


def default_step(x: float) -> float:
    return max(abs(x), 1.0) * _REL_STEP


def finite_diff(f: FunctionDef, point: Sequence[float], var: int, h: float | None = None) -> float:
    """Forward difference ``(f(x + h e_var) - f(x)) / h`` in binary64."""
    point = [float(v) for v in point]
    if h is None:
        h = default_step(point[var])
    if h == 0.0:
        raise ValueError("step must be nonzero")
    shifted = list(point)
    shifted[var] = point[var] + h
    f0 = evaluate(f, point)
    f1 = evaluate(f, shifted)
    if not (math.isfinite(f0) and math.isfinite(f1)):
        raise DerivativeUnavailable(
            f"derivative unavailable at {point}: f={f0!r}, f(x+h)={f1!r}"
        )
    return (f1 - f0) / h
