import math

from hypothesis import strategies as st

from ofprepair.expr import Binary, Constant, FunctionDef, Interval, Param, ParamSpec, Unary

MOTIVATING = "func motivating(x in [0, 3], eps in [-0.001, 0.001]) = sin(x + eps) - sin(x)"


def two_param_def(body, lo=-1.0, hi=1.0):
    return FunctionDef("g", (ParamSpec("x", Interval(lo, hi)), ParamSpec("y", Interval(lo, hi))), body)


# expressions over x, y built from ops that are total on (0.5, 2): no
# log/sqrt/asin of possibly negative values, no division by possibly-zero values
_leaf = st.one_of(
    st.just(Param(0, "x")),
    st.just(Param(1, "y")),
    st.sampled_from([0.0, 1.0, 2.0, 0.5, 3.0, 0.1]).map(Constant),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from(["add", "sub", "mul"]), children, children).map(lambda t: Binary(*t)),
        st.tuples(st.sampled_from(["sin", "cos", "atan", "neg"]), children).map(lambda t: Unary(*t)),
        children.map(lambda c: Unary("exp", Unary("sin", c))),
    )


expressions = st.recursive(_leaf, _extend, max_leaves=8)


def rel(a, b):
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(b), 1e-300)


def isclose_sig(a: float, b: float, digits: int) -> bool:
    """``a`` and ``b`` agree to ``digits`` significant digits."""
    return a == b or abs(a - b) <= 0.5 * 10.0 ** (math.floor(math.log10(abs(b))) - digits + 1)


def corpus_patch(entry):
    """The patch the pipeline would write for a corpus entry."""
    from ofprepair.repair import plan_repair

    return plan_repair(entry.function, entry.peak, entry.region.radius, {entry.region.var: entry.region.midpoint})
