"""Expression trees for the ``.fpdsl`` language.

Nodes are immutable. Node ids are not stored on the nodes themselves: a
node's id is its position in the post-order traversal of the owning
:class:`FunctionDef`, which is also the order in which the working-precision
evaluator visits operations. Shared subtrees therefore get one id per
occurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Union

UNARY_OPS = ("neg", "sin", "cos", "tan", "asin", "acos", "atan", "exp", "log", "sqrt")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTIONS = UNARY_OPS[1:]


def format_float(value: float) -> str:
    """Shortest decimal text that reads back as exactly ``value``."""
    if value == 0.0:
        return "-0" if math.copysign(1.0, value) < 0 else "0"
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


@dataclass(frozen=True, eq=False)
class Constant:
    value: float
    text: str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"constants must be finite, got {self.value!r}")
        if not self.text:
            object.__setattr__(self, "text", format_float(self.value))

    # Structural equality is by binary64 bits; the source spelling is
    # presentation only.
    def __eq__(self, other):
        return isinstance(other, Constant) and self.value.hex() == other.value.hex()

    def __hash__(self):
        return hash(("const", self.value.hex()))

    @property
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class Param:
    index: int
    name: str

    @property
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")

    @property
    def children(self) -> tuple:
        return (self.child,)

    @cached_property
    def _hash(self) -> int:
        return hash((self.op, self.child))

    def __hash__(self):
        return self._hash


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")

    @property
    def children(self) -> tuple:
        return (self.left, self.right)

    @cached_property
    def _hash(self) -> int:
        return hash((self.op, self.left, self.right))

    def __hash__(self):
        return self._hash


Expr = Union[Constant, Param, Unary, Binary]


def const(value: float) -> Constant:
    return Constant(float(value))


def postorder(expr: Expr) -> Iterator[Expr]:
    """Yield every node occurrence, children before parents, left to right."""
    stack: list[tuple[Expr, bool]] = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded or not node.children:
            yield node
            continue
        stack.append((node, True))
        for child in reversed(node.children):
            stack.append((child, False))


def tree_size(expr: Expr) -> int:
    """Number of node occurrences, counting shared subtrees every time."""
    memo: dict[int, int] = {}

    def size(node: Expr) -> int:
        key = id(node)
        if key not in memo:
            memo[key] = 1 + sum(size(c) for c in node.children)
        return memo[key]

    return size(expr)


def depends_on(expr: Expr, index: int) -> bool:
    return any(isinstance(n, Param) and n.index == index for n in postorder(expr))


def substitute(expr: Expr, index: int, replacement: Expr) -> Expr:
    """Replace every ``Param(index)`` occurrence with ``replacement``."""
    if isinstance(expr, Param):
        return replacement if expr.index == index else expr
    if isinstance(expr, Constant):
        return expr
    if isinstance(expr, Unary):
        child = substitute(expr.child, index, replacement)
        return expr if child is expr.child else Unary(expr.op, child)
    left = substitute(expr.left, index, replacement)
    right = substitute(expr.right, index, replacement)
    if left is expr.left and right is expr.right:
        return expr
    return Binary(expr.op, left, right)


def replace_node(expr: Expr, node_id: int, replacement: Expr) -> Expr:
    """Return ``expr`` with the occurrence at post-order position ``node_id`` replaced."""
    counter = 0

    def walk(node: Expr) -> Expr:
        nonlocal counter
        if isinstance(node, Unary):
            child = walk(node.child)
            rebuilt = node if child is node.child else Unary(node.op, child)
        elif isinstance(node, Binary):
            left = walk(node.left)
            right = walk(node.right)
            rebuilt = node if (left is node.left and right is node.right) else Binary(node.op, left, right)
        else:
            rebuilt = node
        here = counter
        counter += 1
        return replacement if here == node_id else rebuilt

    result = walk(expr)
    if node_id >= counter:
        raise IndexError(f"node id {node_id} out of range (tree has {counter} nodes)")
    return result


@dataclass(frozen=True)
class Interval:
    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval bounds must not be NaN")
        if self.lo > self.hi:
            raise ValueError(f"malformed interval: lo={self.lo!r} > hi={self.hi!r}")
        if self.lo == self.hi and not (self.lo_closed and self.hi_closed):
            raise ValueError("interval is empty")

    def __contains__(self, x: float) -> bool:
        if x < self.lo or x > self.hi:
            return False
        if x == self.lo and not self.lo_closed:
            return False
        if x == self.hi and not self.hi_closed:
            return False
        return True

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def __str__(self) -> str:
        def bound(v: float) -> str:
            if math.isinf(v):
                return "-inf" if v < 0 else "inf"
            return format_float(v)

        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{bound(self.lo)}, {bound(self.hi)}{right}"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    domain: Interval = field(default_factory=Interval)


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple[ParamSpec, ...]
    body: Expr

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {self.name}: {names}")
        for node in postorder(self.body):
            if isinstance(node, Param):
                if not 0 <= node.index < len(self.params):
                    raise ValueError(f"parameter index {node.index} out of range in {self.name}")
                if node.name != self.params[node.index].name:
                    raise ValueError(f"parameter {node.index} is named {node.name!r}, expected {self.params[node.index].name!r}")

    @property
    def arity(self) -> int:
        return len(self.params)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def nodes(self) -> list[Expr]:
        """Node occurrences indexed by node id."""
        return list(postorder(self.body))

    def node(self, node_id: int) -> Expr:
        return self.nodes()[node_id]

    def param(self, index: int) -> Param:
        return Param(index, self.params[index].name)

    def with_body(self, body: Expr, name: str | None = None) -> "FunctionDef":
        return FunctionDef(name or self.name, self.params, body)

    def in_domain(self, point) -> bool:
        return all(x in p.domain for x, p in zip(point, self.params))

    def __str__(self) -> str:
        from .printer import pretty_print

        return pretty_print(self)


def count_operations(expr: Expr) -> int:
    return sum(1 for n in postorder(expr) if isinstance(n, (Unary, Binary)))
