import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infhjb.errors import ExprDomainError, ExprSyntaxError
from infhjb.expr import BinOp, Call, Neg, Num, Var, parse_expr, pretty


def test_single_identifier():
    assert parse_expr("x1", 1, 1) == Var("x", 1)


def test_arithmetic_example():
    e = parse_expr("-x1 + u1*u1", 1, 1)
    assert e.evaluate(0.0, [2.0], [3.0]) == 7.0


def test_exp_of_zero():
    e = parse_expr("exp(-t)*x2", 2, 1)
    assert e.evaluate(0.0, [1.0, 5.0], [0.0]) == 5.0


@pytest.mark.parametrize("src, value", [
    ("2^3^2", 512.0),
    ("-x1^2", -9.0),
    ("(-x1)^2", 9.0),
    ("2*3+4", 10.0),
    ("2*(3+4)", 14.0),
    ("8/4/2", 1.0),
    ("1-2-3", -4.0),
    ("min(x1, 1, -2)", -2.0),
    ("max(x1, 1)", 3.0),
    ("abs(-x1) + sqrt(4) + cos(0) + sin(0)", 6.0),
    ("2^-1", 0.5),
    ("+x1", 3.0),
    ("1.5e1 + .5", 15.5),
])
def test_precedence_and_functions(src, value):
    assert parse_expr(src, 1, 1).evaluate(0.0, [3.0], [0.0]) == value


@pytest.mark.parametrize("src, offset", [
    ("x1 + * 2", 5),
    ("(x1", 3),
    ("x1 x1", 3),
    ("", 0),
    ("x1 + $", 5),
    ("sin x1", 0),
])
def test_syntax_error_offsets(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(src, 1, 1)
    assert info.value.offset == offset


def test_offset_of_non_ascii_character():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x1 é", 1, 1)
    assert info.value.offset == 3
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x1 + (é", 1, 1)
    assert info.value.offset == len("x1 + (".encode())


def test_unknown_identifier_and_index_range():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("y1 + 1", 1, 1)
    assert info.value.kind == "unknown-identifier"
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x3", 2, 1)
    assert info.value.kind == "index-range"
    assert info.value.offset == 0
    with pytest.raises(ExprSyntaxError):
        parse_expr("u0", 1, 1)


@pytest.mark.parametrize("src", ["sin(x1, x1)", "min(x1)", "exp()"])
def test_arity(src):
    with pytest.raises(ExprSyntaxError):
        parse_expr(src, 1, 1)


@pytest.mark.parametrize("src, x", [
    ("1/x1", 0.0),
    ("sqrt(x1)", -1.0),
    ("x1^0.5", -4.0),
    ("x1^-1", 0.0),
    ("exp(x1)", 1000.0),
])
def test_domain_errors(src, x):
    with pytest.raises(ExprDomainError):
        parse_expr(src, 1, 1).evaluate(0.0, [x], [0.0])


def test_domain_error_reports_first_bad_index():
    e = parse_expr("1/x1", 1, 1)
    with pytest.raises(ExprDomainError) as info:
        e.evaluate(0.0, np.array([[1.0], [2.0], [0.0], [0.0]]))
    assert info.value.index == 2


def test_vectorised_broadcast():
    e = parse_expr("x1*u1 + t", 1, 1)
    out = e.evaluate(np.array([0.0, 1.0])[:, None], np.array([[1.0], [2.0]])[:, None, :],
                     np.array([[1.0], [2.0], [3.0]]))
    assert out.shape == (2, 3)
    assert out[1, 2] == 2.0 * 3.0 + 1.0


def test_bytes_source():
    assert parse_expr(b"x1+1", 1, 1).evaluate(0.0, [1.0]) == 2.0


# ---------------------------------------------------------------- round trip

_leaf = st.one_of(
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(Num),
    st.just(Var("t", 0)),
    st.integers(1, 2).map(lambda i: Var("x", i)),
    st.just(Var("u", 1)),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: BinOp(*a)),
        st.tuples(st.sampled_from(["exp", "sin", "cos", "abs", "sqrt"]), children).map(
            lambda a: Call(a[0], (a[1],))),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
            lambda a: Call(a[0], tuple(a[1]))),
    )


ast = st.recursive(_leaf, _extend, max_leaves=12)


@given(ast)
def test_pretty_parse_round_trip(node):
    text = pretty(node)
    again = parse_expr(text, 2, 1)
    assert again == node
    assert pretty(parse_expr(pretty(again), 2, 1)) == pretty(again)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_number_literals_survive(v):
    node = parse_expr(pretty(Num(abs(v))), 1, 1)
    assert node == Num(abs(v))


@settings(max_examples=50)
@given(ast, st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_reparsed_tree_evaluates_identically(node, t, x, u):
    again = parse_expr(pretty(node), 2, 1)
    try:
        a = node.evaluate(t, [x, -x], [u])
    except (ExprDomainError, OverflowError):
        return
    b = again.evaluate(t, [x, -x], [u])
    assert a == b or (math.isnan(a) and math.isnan(b))
