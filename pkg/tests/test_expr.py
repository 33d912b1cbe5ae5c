import math
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ofprepair.corpus import builtin_corpus
from ofprepair.expr import (
    ArityError,
    Binary,
    Constant,
    DSLSyntaxError,
    Interval,
    IntervalError,
    Param,
    Unary,
    UnknownIdentifierError,
    count_operations,
    eval_working,
    evaluate,
    format_expr,
    parse,
    parse_file,
    pretty_print,
)

from .helpers import expressions, two_param_def


def test_parse_motivating_structure():
    f = parse("func f(x, eps) = sin(x + eps) - sin(x)")
    assert f.arity == 2
    assert f.param_names == ("x", "eps")
    x, eps = Param(0, "x"), Param(1, "eps")
    assert f.body == Binary("sub", Unary("sin", Binary("add", x, eps)), Unary("sin", x))


def test_parse_domain():
    f = parse("func g(x in [0, 1e10]) = sqrt(x+1) - sqrt(x)")
    assert f.arity == 1
    assert f.params[0].domain == Interval(0.0, 1e10)


def test_parse_open_and_infinite_bounds():
    f = parse("func g(x in (0, inf), y in [-inf, 2)) = x * y")
    d0, d1 = f.params[0].domain, f.params[1].domain
    assert 0.0 not in d0 and 1e300 in d0
    assert 2.0 not in d1 and -1e300 in d1


def test_dangling_operator_is_syntax_error():
    with pytest.raises(DSLSyntaxError) as exc:
        parse("func h(x) = x +")
    assert exc.value.line == 1
    assert exc.value.column == 16


def test_error_positions_across_lines():
    with pytest.raises(DSLSyntaxError) as exc:
        parse_file("# header\nfunc a(x) = x\nfunc b(x) = * x\n")
    assert (exc.value.line, exc.value.column) == (3, 13)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse("func h(x) = x + y")
    with pytest.raises(UnknownIdentifierError):
        parse("func h(x) = sinh(x)")


def test_arity_mismatch():
    with pytest.raises(ArityError):
        parse("func h(x) = sin(x, x)")
    with pytest.raises(ArityError):
        parse("func h(x) = pow(x)")


def test_malformed_interval():
    with pytest.raises(IntervalError):
        parse("func h(x in [2, 1]) = x")


def test_precedence_and_associativity():
    f = parse("func p(a, b, c) = a - b - c")
    assert f.body == Binary("sub", Binary("sub", Param(0, "a"), Param(1, "b")), Param(2, "c"))
    f = parse("func p(a, b, c) = a ^ b ^ c")
    assert f.body == Binary("pow", Param(0, "a"), Binary("pow", Param(1, "b"), Param(2, "c")))
    # ^ binds tighter than unary minus
    f = parse("func p(a) = -a ^ 2")
    assert f.body == Unary("neg", Binary("pow", Param(0, "a"), Constant(2.0)))
    f = parse("func p(a) = 2 ^ -a")
    assert f.body == Binary("pow", Constant(2.0), Unary("neg", Param(0, "a")))


def test_pow_call_syntax():
    assert parse("func p(a) = pow(a, 3)").body == parse("func p(a) = a ^ 3").body


def test_constants_keep_text_and_value():
    f = parse("func c(x) = x + 0.1 + 1.5e-3")
    consts = [n for n in f.nodes() if isinstance(n, Constant)]
    assert [c.text for c in consts] == ["0.1", "1.5e-3"]
    assert [c.value for c in consts] == [0.1, 0.0015]


def test_shortest_round_trip_constant():
    f = parse("func c(x) = x * 0.1")
    assert "0.1" in pretty_print(f)
    assert "0.1000000000000000055" not in pretty_print(f)


def test_pretty_print_motivating():
    f = parse("func f(x, eps) = sin(x + eps) - sin(x)")
    assert format_expr(f.body) == "sin(x + eps) - sin(x)"


def test_corpus_round_trip():
    for entry in builtin_corpus():
        f = entry.function
        assert parse(pretty_print(f)) == f, entry.name
        if entry.twin is not None:
            assert parse(pretty_print(entry.twin)) == entry.twin


@settings(max_examples=300, deadline=None)
@given(expressions)
def test_round_trip_generated(body):
    f = two_param_def(body)
    assert parse(pretty_print(f)) == f


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_literal_round_trip(v):
    f = two_param_def(Binary("add", Param(0, "x"), Constant(v)))
    g = parse(pretty_print(f))
    assert g == f
    assert evaluate(g, (0.0, 0.0)).hex() == evaluate(f, (0.0, 0.0)).hex()


def test_cancellation_bit_exact():
    f = parse("func c(x, y) = x - y")
    value, trace = eval_working(f, (3.14159265358973, 3.14159265358972))
    assert value == 1.021405182655144e-14
    assert value.hex() == (1.021405182655144e-14).hex()
    assert len(trace) == 1


def test_identity_add_zero():
    f = parse("func i(x) = x + 0")
    value, trace = eval_working(f, (7.5,))
    assert value == 7.5
    assert [r.op for r in trace.records] == ["add"]


def test_trace_matches_node_ids_and_replays(motivating):
    value, trace = eval_working(motivating, (2.13, 1e-6))
    assert len(trace) == count_operations(motivating.body)
    ids = [r.node_id for r in trace.records]
    assert ids == sorted(ids)
    for r in trace.records:
        assert motivating.node(r.node_id).op == r.op
    assert trace.replay().hex() == value.hex()
    assert trace.value == value


def test_left_to_right_binary64():
    f = parse("func s(a, b, c) = a + b + c")
    assert evaluate(f, (1e16, 1.0, 1.0)) == (1e16 + 1.0) + 1.0
    assert evaluate(f, (1e16, 1.0, 1.0)) != 1e16 + (1.0 + 1.0)


def test_domain_violations_flag_not_raise():
    for src, point in [
        ("func a(x) = log(x)", (-1.0,)),
        ("func a(x) = sqrt(x)", (-1.0,)),
        ("func a(x) = 1 / x", (0.0,)),
        ("func a(x) = asin(x)", (2.0,)),
        ("func a(x) = exp(x)", (1000.0,)),
    ]:
        value, trace = eval_working(parse(src), point)
        assert not math.isfinite(value)
        assert trace.flagged


def test_evaluate_agrees_with_traced(motivating):
    for p in [(2.13, 1e-6), (0.5, -1e-4), (3.0, 0.0)]:
        assert evaluate(motivating, p) == eval_working(motivating, p)[0]


def test_point_validation(motivating):
    with pytest.raises(ValueError):
        eval_working(motivating, (1.0,))
    with pytest.raises(ValueError):
        eval_working(motivating, (math.nan, 1.0))


def test_determinism_across_threads(motivating):
    points = [(0.1 * k, 1e-7 * k) for k in range(50)]
    expected = [eval_working(motivating, p) for p in points]
    results = {}

    def work(i):
        results[i] = [eval_working(motivating, p) for p in points]

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for got in results.values():
        assert [(v.hex(), t) for v, t in got] == [(v.hex(), t) for v, t in expected]
