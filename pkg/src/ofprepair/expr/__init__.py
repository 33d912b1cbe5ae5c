"""Expression trees, the ``.fpdsl`` parser and binary64 evaluation."""

from .ast import (
    BINARY_OPS,
    UNARY_OPS,
    Binary,
    Constant,
    Expr,
    FunctionDef,
    Interval,
    Param,
    ParamSpec,
    Unary,
    const,
    count_operations,
    depends_on,
    format_float,
    postorder,
    replace_node,
    substitute,
    tree_size,
)
from .evaluate import EvalTrace, TraceRecord, compile_expr, eval_working, evaluate
from .parser import (
    ArityError,
    DSLError,
    DSLSyntaxError,
    IntervalError,
    UnknownIdentifierError,
    parse,
    parse_file,
)
from .printer import format_expr, pretty_print

__all__ = [
    "BINARY_OPS",
    "UNARY_OPS",
    "ArityError",
    "Binary",
    "Constant",
    "DSLError",
    "DSLSyntaxError",
    "EvalTrace",
    "Expr",
    "FunctionDef",
    "Interval",
    "IntervalError",
    "Param",
    "ParamSpec",
    "TraceRecord",
    "Unary",
    "UnknownIdentifierError",
    "compile_expr",
    "const",
    "count_operations",
    "depends_on",
    "eval_working",
    "evaluate",
    "format_expr",
    "format_float",
    "parse",
    "parse_file",
    "postorder",
    "pretty_print",
    "replace_node",
    "substitute",
    "tree_size",
]
