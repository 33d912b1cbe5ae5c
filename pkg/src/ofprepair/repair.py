"""Working-precision Taylor patches.

A patch replaces one subexpression of a function (the whole body, or the
subtree where cancellation happens) with its truncated Taylor polynomial in
one expansion variable, evaluated by Horner's rule in binary64. The other
parameters stay symbolic inside the coefficients, so a patch expanded in
``eps`` is valid for every ``x``.

The expansion variable is usually a parameter. It can also be a literal of
the body, as in ``sqrt(x + 1) - sqrt(x)``: the ``1`` is treated as a
perturbation ``h`` and the patch is the series in ``h`` evaluated at
``h = 1``.

No extended precision is used anywhere in this module.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

from .autodiff import DEFAULT_NODE_CAP, NodeCapExceeded, nth_derivative_exprs, simplify
from .detect import THETA_ATOMIC, atomic_conditions, max_atomic_condition
from .expr import (
    Binary,
    Constant,
    Expr,
    FunctionDef,
    Param,
    ParamSpec,
    Unary,
    depends_on,
    eval_working,
    evaluate,
    postorder,
    pretty_print,
    replace_node,
    substitute,
)

log = logging.getLogger(__name__)

MAX_TERMS = 10

KEPT = "kept"
CANCELLED = "analytically-cancelled"

DIVERGENCE = "divergence"
IRREDUCIBLE = "irreducible-constant"
DEGRADED = "degraded"
NO_CANDIDATE = "no-candidate"


class RepairError(ArithmeticError):
    def __init__(self, reason: str, message: str):
        self.reason = reason
        super().__init__(f"{reason}: {message}")


class PatchDomainError(ValueError):
    """The point lies outside the patch's validity radius; use the original function."""


@dataclass(frozen=True)
class Literal:
    """A literal of the body, addressed by node id, used as the expansion variable."""

    node_id: int


ExpansionVar = Union[int, Literal]


def term_cap(radius: float) -> int:
    """Number of Taylor terms worth keeping for offsets up to ``radius``.

    The smallest ``n`` for which ``radius + radius**n`` rounds back to
    ``radius`` in binary64, i.e. the first power that drops below the
    representable granularity at the radius; clamped to ``[1, 10]``.
    """
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    for n in range(1, MAX_TERMS + 1):
        if radius + radius**n == radius:
            return n
    return MAX_TERMS


@dataclass(frozen=True)
class Coefficient:
    order: int
    expr: Expr
    value: float


@dataclass(frozen=True)
class TaylorPatch:
    function: FunctionDef
    target: int
    var: ExpansionVar
    center: float
    point: tuple[float, ...]
    coefficients: tuple[Coefficient, ...]
    radius: float
    mode: str
    patched: FunctionDef
    degraded: bool = False
    magnitude_ok: bool = True

    @property
    def terms(self) -> int:
        return len(self.coefficients)

    @property
    def degree(self) -> int:
        return max((c.order for c in self.coefficients), default=0)

    @property
    def var_name(self) -> str:
        if isinstance(self.var, Literal):
            return f"literal#{self.var.node_id}"
        return self.function.params[self.var].name

    @property
    def whole_function(self) -> bool:
        return self.target == len(self.function.nodes()) - 1

    def offset(self, point: Sequence[float]) -> float:
        if isinstance(self.var, Literal):
            return self.function.node(self.var.node_id).value - self.center
        return float(point[self.var]) - self.center

    def covers(self, point: Sequence[float]) -> bool:
        return abs(self.offset(point)) <= self.radius

    def __call__(self, point: Sequence[float]) -> float:
        return eval_patch(self, point)

    def to_dict(self) -> dict:
        return {
            "function": self.function.name,
            "target": self.target,
            "var": self.var_name,
            "center": self.center,
            "radius": self.radius,
            "mode": self.mode,
            "degree": self.degree,
            "degraded": self.degraded,
            "magnitudeOk": self.magnitude_ok,
            "coeffs": [
                {"order": c.order, "expr": _fmt(c.expr), "value": c.value} for c in self.coefficients
            ],
            "source": emit_patch_source(self),
        }


def _fmt(e: Expr) -> str:
    from .expr import format_expr

    return format_expr(e)


def _lift(f: FunctionDef, literal: Literal) -> tuple[FunctionDef, int, float]:
    node = f.node(literal.node_id)
    if not isinstance(node, Constant):
        raise ValueError(f"node {literal.node_id} of {f.name} is not a literal")
    name = "_h"
    while name in f.param_names:
        name += "_"
    index = f.arity
    body = replace_node(f.body, literal.node_id, Param(index, name))
    lifted = FunctionDef(f.name, f.params + (ParamSpec(name),), body)
    return lifted, index, node.value


def _horner(coeffs: list[tuple[int, Expr]], delta: Expr, drop_constant: bool) -> Expr:
    """Horner form of ``sum c_k delta^k``, highest degree first; zero terms skipped."""
    by_order = dict(coeffs)
    top = max(k for k in by_order if not _is_zero(by_order[k]))
    acc: Expr = by_order[top]
    for k in range(top - 1, -1, -1):
        acc = Binary("mul", acc, delta)
        if k == 0 and drop_constant:
            break
        c = by_order.get(k)
        if c is None or _is_zero(c):
            continue
        if isinstance(c, Unary) and c.op == "neg":
            acc = Binary("sub", acc, c.child)
        elif isinstance(c, Constant) and c.value < 0:
            acc = Binary("sub", acc, Constant(-c.value))
        else:
            acc = Binary("add", acc, c)
    return acc


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Constant) and e.value == 0.0


def _factorial_div(e: Expr, k: int) -> Expr:
    if k < 2:
        return e
    return simplify(Binary("div", e, Constant(float(math.factorial(k)))))


def _freeze(e: Expr, value: float) -> Expr:
    # coefficients that no longer depend on any parameter are emitted as literals
    if any(isinstance(n, Param) for n in postorder(e)):
        return e
    return Constant(value) if math.isfinite(value) else e


def synthesize_patch(
    f: FunctionDef,
    point: Sequence[float],
    var: ExpansionVar,
    radius: float = 0.01,
    node: int | None = None,
    center: float | None = None,
    theta_atomic: float = THETA_ATOMIC,
    node_cap: int = DEFAULT_NODE_CAP,
    max_terms: int | None = None,
) -> TaylorPatch:
    """Taylor-expand ``f`` (or its subtree ``node``) in ``var`` and splice the
    Horner polynomial back in.

    ``center`` defaults to ``point[var]`` snapped to a round value at the
    scale of ``radius`` (``0`` when ``|point[var]| <= radius``) for a
    parameter, and to ``0`` for a literal. ``max_terms`` overrides the degree
    given by :func:`term_cap`. Raises :class:`RepairError` with reason ``divergence`` when a
    coefficient is not finite at the expansion point, and ``irreducible-constant``
    when the constant term cancels numerically but not structurally.
    """
    point = tuple(float(v) for v in point)
    if len(point) != f.arity:
        raise ValueError(f"{f.name} takes {f.arity} argument(s), got {len(point)}")
    target_id = len(f.nodes()) - 1 if node is None else node
    work = f
    if isinstance(var, Literal):
        work, index, delta_value = _lift(f, var)
        a = 0.0 if center is None else float(center)
        radius = abs(delta_value - a)
        eval_point = point + (a,)
        delta: Expr = Constant(delta_value) if a == 0.0 else Binary("sub", Constant(delta_value), Constant(a))
    else:
        index = int(var)
        if not 0 <= index < f.arity:
            raise ValueError(f"parameter index {index} out of range for {f.name}")
        a = _nice_center(point[index], radius) if center is None else float(center)
        eval_point = tuple(a if i == index else v for i, v in enumerate(point))
        p = f.param(index)
        delta = p if a == 0.0 else Binary("sub", p, Constant(a))
    if not radius > 0.0:
        raise RepairError(DIVERGENCE, "expansion needs a positive radius")

    target = work.nodes()[target_id]
    n = term_cap(radius) if max_terms is None else max(1, int(max_terms))
    degraded = False
    try:
        derivs = nth_derivative_exprs(target, index, n, node_cap)
    except NodeCapExceeded as exc:
        derivs = exc.partial
        degraded = True
        log.warning("%s: derivative of order %d exceeds node cap; patch keeps %d terms", f.name, exc.order, len(derivs))
    if degraded and len(derivs) < 2:
        raise RepairError(DEGRADED, "node cap reached before the first derivative")

    at_center = Constant(a)
    coeffs: list[Coefficient] = []
    raw_c0: Expr | None = None
    for k, d in enumerate(derivs):
        expr = _factorial_div(simplify(substitute(d, index, at_center)), k)
        coef_fn = work.with_body(expr)
        value = evaluate(coef_fn, eval_point)
        if not math.isfinite(value):
            raise RepairError(
                DIVERGENCE,
                f"Taylor expansion inapplicable at expansion point: order-{k} coefficient of {f.name} is {value!r}",
            )
        if k == 0:
            raw_c0 = expr
        coeffs.append(Coefficient(k, _freeze(expr, value), value))

    # decide on the unfrozen constant term: a numeric zero is not a proof
    if _is_zero(raw_c0):
        mode = CANCELLED
    else:
        constant_fn = work.with_body(raw_c0)
        worst, _ = max_atomic_condition(constant_fn, eval_point)
        if worst >= theta_atomic:
            raise RepairError(
                IRREDUCIBLE,
                f"constant term of {f.name} cancels in working precision (atomic condition {worst:.3g})",
            )
        mode = KEPT

    kept = [c for c in coeffs if not (mode == CANCELLED and c.order == 0)]
    if all(_is_zero(c.expr) for c in kept):
        poly: Expr = Constant(0.0)
    else:
        poly = _horner([(c.order, c.expr) for c in kept], delta, drop_constant=mode == CANCELLED)
    body = replace_node(f.body, target_id, poly)
    patched = f.with_body(body, name=f"{f.name}_patched")
    if isinstance(var, Literal) and depends_on(body, f.arity):
        raise AssertionError("lifted literal leaked into the patch")  # pragma: no cover

    return TaylorPatch(
        function=f,
        target=target_id,
        var=var,
        center=a,
        point=point,
        coefficients=tuple(kept),
        radius=radius,
        mode=mode,
        patched=patched,
        degraded=degraded,
        magnitude_ok=_magnitudes_decrease(kept, radius),
    )


def _magnitudes_decrease(coeffs: Sequence[Coefficient], radius: float) -> bool:
    """Nonzero terms ``|c_k| r^k`` must not grow with ``k`` at the boundary."""
    prev = None
    for c in coeffs:
        if c.value == 0.0:
            continue
        if prev is not None:
            gap = c.order - prev.order
            if abs(c.value) * radius**gap > abs(prev.value):
                return False
        prev = c
    return True


def eval_patch(p: TaylorPatch, point: Sequence[float]) -> float:
    """Evaluate the patched function in binary64; raises outside the validity radius."""
    if not p.covers(point):
        raise PatchDomainError(
            f"patch domain exceeded: |offset| = {abs(p.offset(point))!r} > radius {p.radius!r}"
        )
    return evaluate(p.patched, point)


def emit_patch_source(p: TaylorPatch) -> str:
    return pretty_print(p.patched)


def _nice_center(x: float, radius: float) -> float:
    if abs(x) <= radius:
        return 0.0
    quantum = 10.0 ** math.floor(math.log10(radius))
    return round(x / quantum) * quantum


def _path_to(f: FunctionDef, node_id: int) -> list[int]:
    """Node ids from the root down to ``node_id``."""
    nodes = f.nodes()
    parent: dict[int, int] = {}
    # rebuild parent links from post-order positions
    stack: list[int] = []
    for i, n in enumerate(nodes):
        k = len(n.children)
        children = stack[len(stack) - k:] if k else []
        if k:
            del stack[len(stack) - k:]
        for c in children:
            parent[c] = i
        stack.append(i)
    path = [node_id]
    while path[-1] in parent:
        path.append(parent[path[-1]])
    return list(reversed(path))


def _subtree_ids(f: FunctionDef, node_id: int) -> range:
    size = sum(1 for _ in postorder(f.nodes()[node_id]))
    return range(node_id - size + 1, node_id + 1)


def _param_candidates(f: FunctionDef, target: int, point, radius, centers) -> list[tuple[ExpansionVar, float]]:
    sub = f.nodes()[target]
    params = sorted({n.index for n in postorder(sub) if isinstance(n, Param)})
    structural, other = [], []
    for i in params:
        a = centers.get(i, _nice_center(point[i], radius))
        c0 = simplify(substitute(sub, i, Constant(a)))
        (structural if _is_zero(c0) else other).append((i, a))
    return structural + other


def _literal_candidates(f: FunctionDef, target: int) -> list[tuple[ExpansionVar, None]]:
    # literals that sit directly under an add/sub act as perturbations
    nodes = f.nodes()
    out: list[tuple[ExpansionVar, None]] = []
    for nid in _subtree_ids(f, target):
        node = nodes[nid]
        if not isinstance(node, Binary) or node.op not in ("add", "sub"):
            continue
        for child_id, child in _child_ids(f, nid):
            if isinstance(child, Constant) and child.value != 0.0:
                out.append((Literal(child_id), None))
    return out


def _child_ids(f: FunctionDef, node_id: int) -> list[tuple[int, Expr]]:
    nodes = f.nodes()
    node = nodes[node_id]
    if isinstance(node, Binary):
        right_size = sum(1 for _ in postorder(node.right))
        right_id = node_id - 1
        left_id = node_id - 1 - right_size
        return [(left_id, node.left), (right_id, node.right)]
    if isinstance(node, Unary):
        return [(node_id - 1, node.child)]
    return []


def plan_repair(
    f: FunctionDef,
    point: Sequence[float],
    radius: float = 0.01,
    centers: dict[int, float] | None = None,
    theta_atomic: float = THETA_ATOMIC,
    node_cap: int = DEFAULT_NODE_CAP,
) -> TaylorPatch:
    """Pick a target subtree and expansion variable for the error at ``point``.

    Targets are the whole function, then each subtree on the path down to the
    operation with the largest atomic condition. Parameter expansions are
    tried on every target before perturbation literals; within a target,
    parameters whose substitution makes the constant term vanish structurally
    come first. A candidate is accepted only if its terms shrink over the
    validity radius and the patched function no longer trips an atomic
    condition of ``theta_atomic`` at ``point``.
    """
    point = tuple(float(v) for v in point)
    centers = dict(centers or {})
    _, flagged = max_atomic_condition(f, point)
    root = len(f.nodes()) - 1
    targets = _path_to(f, flagged) if flagged is not None else [root]
    failures: list[RepairError] = []
    plan = [(t, v, c) for t in targets for v, c in _param_candidates(f, t, point, radius, centers)]
    plan += [(t, v, c) for t in targets for v, c in _literal_candidates(f, t)]
    for target, var, center in plan:
        try:
            patch = synthesize_patch(
                f, point, var, radius, node=target, center=center,
                theta_atomic=theta_atomic, node_cap=node_cap,
            )
        except RepairError as exc:
            failures.append(exc)
            continue
        if not patch.covers(point):
            continue
        if not patch.magnitude_ok:
            msg = f"series for {f.name} in {patch.var_name} does not converge over the radius"
            failures.append(RepairError(DIVERGENCE, msg))
            continue
        value, trace = eval_working(patch.patched, point)
        worst = max((r.max for r in atomic_conditions(trace)), default=0.0)
        if math.isfinite(value) and worst < theta_atomic:
            return patch
        failures.append(RepairError(IRREDUCIBLE, f"patch for {f.name} still cancels at {point}"))
    if failures:
        first = failures[0]
        raise RepairError(first.reason, str(first).split(": ", 1)[-1])
    raise RepairError(NO_CANDIDATE, f"no expansion variable found for {f.name}")
