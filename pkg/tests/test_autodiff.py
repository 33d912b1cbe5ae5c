import math

import mpmath
import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from ofprepair import oracle
from ofprepair.autodiff import (
    DerivativeUnavailable,
    NodeCapExceeded,
    default_step,
    derivative_expr,
    differentiate,
    finite_diff,
    nth_derivative,
    nth_derivative_exprs,
    power_form,
    simplify,
)
from ofprepair.corpus import builtin_corpus
from ofprepair.expr import Binary, Constant, evaluate, format_expr, parse, tree_size

from .helpers import expressions, two_param_def


def to_sympy(e):
    """Independent reading of an expression through sympy's own parser."""
    names = {n: sympy.Symbol(n) for n in ("x", "y", "eps", "c")}
    return sympy.sympify(format_expr(e).replace("^", "**"), locals=names)


def body(src):
    return parse(f"func t(x, eps) = {src}").body


# -- differentiate -------------------------------------------------------------


def test_chain_rule_motivating(motivating):
    assert format_expr(differentiate(motivating, 0).body) == "cos(x + eps) - cos(x)"
    assert differentiate(motivating, 0).name == "d_motivating_d_x"


def test_sqrt_difference():
    g = parse("func g(x in [0, 1e10]) = sqrt(x+1) - sqrt(x)")
    assert format_expr(differentiate(g, 0).body) == "1 / (2 * sqrt(x + 1)) - 1 / (2 * sqrt(x))"


def test_sin_derivative_cycle(motivating):
    # coefficients of the expansion in eps: cos, -sin, -cos, sin, cos
    got = [format_expr(nth_derivative(motivating, 1, k).body) for k in range(1, 6)]
    assert got == ["cos(x + eps)", "-sin(x + eps)", "-cos(x + eps)", "sin(x + eps)", "cos(x + eps)"]


def test_second_derivative_of_sin():
    f = parse("func s(x) = sin(x)")
    assert format_expr(nth_derivative(f, 0, 2).body) == "-sin(x)"


def test_first_derivative_is_differentiate(motivating):
    for var in (0, 1):
        assert nth_derivative(motivating, var, 1).body == differentiate(motivating, var).body


def test_tenth_derivative_under_cap(motivating):
    for var in (0, 1):
        d = nth_derivative(motivating, var, 10)
        assert tree_size(d.body) <= 50_000
        assert tree_size(d.body) < 20


def test_node_cap_fails_cleanly():
    f = parse("func q(x) = exp(sin(x)) / (1 + x^2)")
    with pytest.raises(NodeCapExceeded) as exc:
        nth_derivative_exprs(f.body, 0, 10, node_cap=200)
    assert exc.value.cap == 200
    assert exc.value.size > 200
    assert len(exc.value.partial) == exc.value.order


def test_nth_derivative_rejects_order_zero(motivating):
    with pytest.raises(ValueError):
        nth_derivative(motivating, 0, 0)


@pytest.mark.parametrize(
    "src",
    [
        "x^3 * eps",
        "x^eps",
        "log(x) / x",
        "tan(x) + atan(x)",
        "asin(x) * acos(x)",
        "sqrt(x + 1) - sqrt(x)",
        "exp(x) - 1",
        "pow(2, x)",
        "-x ^ 2",
    ],
)
def test_derivatives_match_sympy(src):
    e = body(src)
    x, eps = sympy.symbols("x eps")
    ref = to_sympy(e)
    exprs = nth_derivative_exprs(e, 0, 4)
    for k, d in enumerate(exprs[1:], start=1):
        truth = sympy.diff(ref, x, k)
        for xv in (0.3, 0.7):
            want = float(truth.subs({x: xv, eps: 1.5}).evalf(40))
            got = evaluate(two_param_def_from(d), (xv, 1.5))
            assert math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-14), (src, k, got, want)


def two_param_def_from(e):
    from ofprepair.expr import FunctionDef, ParamSpec

    return FunctionDef("d", (ParamSpec("x"), ParamSpec("eps")), e)


@settings(max_examples=150, deadline=None)
@given(expressions, expressions, st.sampled_from([2.0, -3.0, 0.5]), st.sampled_from([1.0, 4.0, -0.25]))
def test_linearity(f, g, a, b):
    lhs = derivative_expr(Binary("add", Binary("mul", Constant(a), f), Binary("mul", Constant(b), g)), 0)
    rhs = simplify(
        Binary(
            "add",
            Binary("mul", Constant(a), derivative_expr(f, 0)),
            Binary("mul", Constant(b), derivative_expr(g, 0)),
        )
    )
    assert lhs == rhs


# -- simplify -----------------------------------------------------------------


@pytest.mark.parametrize(
    "src, want",
    [
        ("(x + 0) * 1", "x"),
        ("sin(x) - sin(x)", "0"),
        ("2 * 3", "6"),
        ("x - 0", "x"),
        ("0 + x", "x"),
        ("1 * x", "x"),
        ("x * 0", "0"),
        ("0 * x", "0"),
        ("0 / x", "0"),
        ("x ^ 1", "x"),
        ("x ^ 0", "1"),
        ("-(-x)", "x"),
        ("x / 1", "x"),
    ],
)
def test_simplify_rules(src, want):
    assert format_expr(simplify(body(src))) == want


def test_simplify_leaves_near_identities():
    # only structurally identical subtrees cancel
    assert format_expr(simplify(body("sin(x + eps) - sin(x)"))) == "sin(x + eps) - sin(x)"
    # inexact folds are not performed
    assert format_expr(simplify(body("0.1 + 0.2"))) == "0.1 + 0.2"
    assert format_expr(simplify(body("0.5 + 0.25"))) == "0.75"


@settings(max_examples=150, deadline=None)
@given(expressions, st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_simplify_preserves_real_semantics(e, xv, yv):
    f = two_param_def(e, lo=0.5, hi=2.0)
    s = two_param_def(simplify(e), lo=0.5, hi=2.0)
    try:
        a = oracle.eval_extended(f, (xv, yv), 240)
    except oracle.OracleError:
        return
    b = oracle.eval_extended(s, (xv, yv), 240)
    with mpmath.workprec(240):
        scale = max(abs(a), mpmath.mpf(1))
        assert abs(a - b) / scale <= mpmath.mpf("1e-50")


def test_power_form_is_equivalent():
    e = body("sqrt(x + 1) / (x * eps)")
    p = power_form(e)
    assert "sqrt" not in format_expr(p) and "/" not in format_expr(p)
    f, g = two_param_def_from(e), two_param_def_from(p)
    for pt in [(0.5, 2.0), (3.0, -1.5)]:
        assert math.isclose(evaluate(f, pt), evaluate(g, pt), rel_tol=1e-15)


# -- finite differences -----------------------------------------------------


def test_finite_diff_square():
    f = parse("func q(x) = x^2")
    assert abs(finite_diff(f, (1.0,), 0, 1e-8) - 2.0) <= 1e-7


def test_finite_diff_constant():
    f = parse("func k(x) = 5")
    assert finite_diff(f, (0.3,), 0) == 0.0


def test_finite_diff_is_forward(motivating):
    p = (2.13, 1e-6)
    h = 1e-5
    want = (evaluate(motivating, (2.13 + h, 1e-6)) - evaluate(motivating, p)) / h
    assert finite_diff(motivating, p, 0, h) == want


def test_finite_diff_unavailable():
    f = parse("func l(x) = log(x)")
    with pytest.raises(DerivativeUnavailable):
        finite_diff(f, (-1.0,), 0)
    with pytest.raises(ValueError):
        finite_diff(f, (1.0,), 0, 0.0)


def test_default_step_rule():
    assert default_step(2.13) == 2.13 * 2.0**-26
    assert default_step(0.0) == 2.0**-26
    assert default_step(-0.5) == 2.0**-26
    assert default_step(1e9) == 1e9 * 2.0**-26


def test_symbolic_matches_finite_difference_on_corpus():
    rng = np.random.default_rng(0)
    for entry in builtin_corpus():
        f = entry.function
        derivs = [differentiate(f, i) for i in range(f.arity)]
        accepted = 0
        while accepted < 10:
            p = tuple(float(rng.uniform(s.domain.lo, s.domain.hi)) for s in f.params)
            fx = evaluate(f, p)
            if not (f.in_domain(p) and math.isfinite(fx) and abs(fx) >= 1e-6):
                continue
            for i in range(f.arity):
                shifted = list(p)
                shifted[i] += default_step(p[i])
                if not f.in_domain(shifted):
                    continue
                sym = evaluate(derivs[i], p)
                num = finite_diff(f, p, i)
                assert abs(sym - num) / max(abs(sym), 1.0) <= 1e-4, (entry.name, p, i, sym, num)
            accepted += 1
