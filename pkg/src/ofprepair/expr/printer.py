from __future__ import annotations

from .ast import Binary, Constant, Expr, FunctionDef, Param, Unary, format_float

_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOM = 5


def _prec(node: Expr) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC["neg"]
    if isinstance(node, Constant) and node.text.startswith("-"):
        # a negative literal reads back like a unary minus
        return _PREC["neg"]
    return _ATOM


def format_expr(node: Expr) -> str:
    if isinstance(node, Constant):
        return format_float(node.value)
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Unary):
        if node.op != "neg":
            return f"{node.op}({format_expr(node.child)})"
        child = node.child
        # "-2" would re-parse as a negative literal, so keep the minus outside
        if isinstance(child, Constant) or _prec(child) < _PREC["neg"]:
            return f"-({format_expr(child)})"
        return f"-{format_expr(child)}"
    op = node.op
    prec = _PREC[op]
    left, right = format_expr(node.left), format_expr(node.right)
    if op == "pow":
        if _prec(node.left) <= prec:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < prec:
        left = f"({left})"
    if _prec(node.right) <= prec:
        right = f"({right})"
    return f"{left} {_INFIX[op]} {right}"


def pretty_print(f: FunctionDef) -> str:
    params = []
    for p in f.params:
        if p.domain.lo == float("-inf") and p.domain.hi == float("inf"):
            params.append(p.name)
        else:
            params.append(f"{p.name} in {p.domain}")
    return f"func {f.name}({', '.join(params)}) = {format_expr(f.body)}"
