import math

import mpmath
import pytest

from ofprepair.autodiff import differentiate
from ofprepair.corpus import NEGATIVE_CONTROL, builtin_corpus, corpus_entry
from ofprepair.detect import (
    ClassificationInconclusive,
    ConditionUndefined,
    Label,
    atomic_conditions,
    classify,
    function_condition,
    max_atomic_condition,
    search_error_inputs,
)
from ofprepair.expr import Binary, Constant, Interval, eval_working, evaluate, parse


def records(src, point):
    f = parse(src)
    _, trace = eval_working(f, point)
    return atomic_conditions(trace)


def test_mul_and_div_are_well_conditioned():
    for r in records("func m(x, y) = x * y", (3.7, -1e300)):
        assert r.conditions == (1.0, 1.0)
    for r in records("func m(x, y) = x / y", (3.7, 1e-300)):
        assert r.conditions == (1.0, 1.0)


def test_add_equal_operands():
    (r,) = records("func a(x, y) = x + y", (1.0, 1.0))
    assert r.conditions == (0.5, 0.5)


def test_sub_node_of_motivating(motivating):
    _, trace = eval_working(motivating, (2.13, 1e-6))
    sub = [r for r in atomic_conditions(trace) if r.op == "sub"][0]
    a, b = math.sin(2.13 + 1e-6), math.sin(2.13)
    assert sub.conditions[0] == abs(a / (a - b))
    assert sub.conditions[1] == abs(b / (a - b))
    assert sub.conditions[0] == pytest.approx(1.5978e6, rel=1e-4)


def test_exact_cancellation_is_infinite():
    (r,) = records("func s(x, y) = x - y", (0.5, 0.5))
    assert r.conditions == (math.inf, math.inf)


@pytest.mark.parametrize(
    "op, u",
    [("sin", 2.13), ("cos", 1.2), ("tan", 0.7), ("exp", -3.5), ("log", 1.001), ("sqrt", 7.0),
     ("asin", 0.3), ("acos", 0.9), ("atan", 4.0)],
)
def test_unary_formulas_match_numeric_definition(op, u):
    (r,) = records(f"func g(u) = {op}(u)", (u,))
    fn = getattr(mpmath, op)
    with mpmath.workprec(200):
        want = abs(u * mpmath.diff(fn, u) / fn(u))
    assert r.conditions[0] == pytest.approx(float(want), rel=1e-12)


def test_pow_formula():
    (r,) = records("func p(u, v) = u ^ v", (1.7, 2.5))
    assert r.conditions[0] == pytest.approx(2.5, rel=1e-15)
    assert r.conditions[1] == pytest.approx(2.5 * math.log(1.7), rel=1e-15)


def test_conditions_nonnegative_one_per_operand(motivating):
    _, trace = eval_working(motivating, (0.3, -2e-4))
    for r in atomic_conditions(trace):
        node = motivating.node(r.node_id)
        assert len(r.conditions) == len(node.children)
        assert all(c >= 0 for c in r.conditions)


def test_function_condition_motivating(motivating):
    assert function_condition(motivating, (2.13, 1e-6), 0) == 3.4034175514549854


def test_function_condition_linear():
    f = parse("func l(x) = 3.5 * x")
    for x in (1e-300, 0.25, 7.0, 1e200):
        # forward-difference rounding is about eps / 2**-26
        assert function_condition(f, (x,), 0) == pytest.approx(1.0, rel=1e-8)


def test_function_condition_at_root_is_undefined():
    f = parse("func r(x) = x - 1")
    with pytest.raises(ConditionUndefined):
        function_condition(f, (1.0,), 0)


def test_classify_motivating(motivating):
    c = classify(motivating, (2.13, 1e-6))
    assert c.label is Label.ORIGINAL_PRECISION_REPAIRABLE
    assert c.gammas[0] == pytest.approx(3.4, rel=0.01)
    assert c.max_atomic > 1e5
    assert c.probe == (2.13 + 1e-5, 1e-6 + 1e-5)
    d = c.to_dict()
    assert d["label"] == "OriginalPrecisionRepairable"
    assert d["thresholds"] == {"thetaAtomic": 1e5, "thetaFunc": 1e5}


def test_classify_well_conditioned():
    f = parse("func w(x in [-10, 10]) = x * 2")
    assert classify(f, (1.3,)).label is Label.NO_SIGNIFICANT_ERROR


def test_classify_input_difference_needs_high_precision():
    # subtracting nearly equal inputs: the error lives in the inputs themselves
    f = parse("func d(x, y) = x - y")
    c = classify(f, (1.0 + 2.0**-52, 1.0))
    assert c.label is Label.REQUIRES_HIGH_PRECISION
    assert max(c.gammas) > 1e15


def test_classify_sin_near_pi():
    f = parse("func s(x in [3, 3.3]) = sin(x)")
    c = classify(f, (math.pi,))
    assert c.label is Label.REQUIRES_HIGH_PRECISION


def test_classify_thresholds_are_parameters(motivating):
    c = classify(motivating, (2.13, 1e-6), theta_func=1.0)
    assert c.label is Label.REQUIRES_HIGH_PRECISION
    c = classify(motivating, (2.13, 1e-6), theta_atomic=1e7)
    assert c.label is Label.NO_SIGNIFICANT_ERROR


def test_classify_inconclusive_when_probe_vanishes():
    f = parse("func z(x, y) = x - y")
    with pytest.raises(ClassificationInconclusive):
        classify(f, (0.5, 0.5))


def test_probe_stays_in_domain():
    f = parse("func b(x in [0, 1]) = (exp(x) - 1) / x")
    c = classify(f, (1.0 - 1e-9,))
    assert c.probe[0] < 1.0


@pytest.mark.parametrize("c", [2.0, 0.5, -4.0, 3.0, -0.1])
def test_scale_invariance(c):
    for entry in builtin_corpus():
        f = entry.function
        g = f.with_body(Binary("mul", f.body, Constant(c)))
        a, b = classify(f, entry.peak), classify(g, entry.peak)
        assert a.label is b.label, entry.name
        for x, y in zip(a.gammas, b.gammas):
            if math.log2(abs(c)).is_integer():
                assert x == y
            else:
                assert x == pytest.approx(y, rel=1e-6)
        _, ta = eval_working(f, entry.peak)
        _, tb = eval_working(g, entry.peak)
        ra = {r.node_id: r for r in atomic_conditions(ta) if r.op in ("add", "sub")}
        rb = {r.node_id: r for r in atomic_conditions(tb) if r.op in ("add", "sub")}
        assert ra == rb


def test_gamma_symbolic_vs_numeric_same_order():
    for entry in builtin_corpus():
        f = entry.function
        c = classify(f, entry.peak)
        fx = evaluate(f, c.probe)
        for i, g in enumerate(c.gammas):
            sym = abs(c.probe[i] * evaluate(differentiate(f, i), c.probe) / fx)
            if sym == 0.0:
                assert g == 0.0
                continue
            assert 0.1 <= g / sym <= 10, (entry.name, i, g, sym)


def test_corpus_classification():
    for entry in builtin_corpus():
        c = classify(entry.function, entry.peak)
        assert c.label is entry.expected, entry.name
        if entry.repairable:
            assert all(g < 10 for g in c.gammas), entry.name
            assert c.max_atomic >= 1e5
    controls = {e.expected for e in builtin_corpus() if e.kind == NEGATIVE_CONTROL}
    assert controls == {Label.NO_SIGNIFICANT_ERROR, Label.REQUIRES_HIGH_PRECISION}


# -- search -------------------------------------------------------------------


def test_search_motivating():
    f = parse("func m(x in [0, 3], eps in [1e-9, 1e-3]) = sin(x + eps) - sin(x)")
    found = search_error_inputs(f, budget=2000, seed=0)
    assert found
    assert found[0].max_atomic >= 1e9
    assert f.node(found[0].node_id).op == "sub"


def test_search_well_conditioned_is_empty():
    assert search_error_inputs(parse("func a(x in [0, 1]) = x + 1"), seed=3) == []


def test_search_sqrt_difference():
    f = parse("func s(x in [1e8, 1e10]) = sqrt(x + 1) - sqrt(x)")
    found = search_error_inputs(f, seed=1)
    assert found
    x = found[0].point[0]
    assert 1e8 <= x <= 1e10
    # |sqrt(x+1) / (sqrt(x+1) - sqrt(x))| is about 2x
    assert found[0].max_atomic == pytest.approx(2 * x, rel=0.01)


def test_search_sorted_and_deterministic():
    f = parse("func t(x in [-3, 3], y in [-1, 1]) = cos(x) - cos(y)")
    a = search_error_inputs(f, budget=1500, seed=11)
    assert [r.max_atomic for r in a] == sorted((r.max_atomic for r in a), reverse=True)
    assert a == search_error_inputs(f, budget=1500, seed=11)
    assert a == search_error_inputs(f, budget=1500, seed=11, n_jobs=4)


def test_search_finds_narrow_spike():
    assert search_error_inputs(corpus_entry("sin_near_pi").function, seed=0)


def test_search_errors():
    f = parse("func u(x) = x")
    with pytest.raises(ValueError):
        search_error_inputs(f)
    with pytest.raises(ValueError):
        search_error_inputs(f, budget=0, box=[Interval(0.0, 1.0)])
    assert search_error_inputs(f, budget=10, box=[Interval(0.0, 1.0)]) == []


def test_max_atomic_condition_node(motivating):
    m, node = max_atomic_condition(motivating, (2.13, 1e-6))
    assert motivating.node(node).op == "sub"
    assert m == pytest.approx(1.5978e6, rel=1e-4)
