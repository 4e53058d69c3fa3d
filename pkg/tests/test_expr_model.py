import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monotone_io import expr as ex
from monotone_io.model import (
    BUILTIN_NAMES,
    EvaluationError,
    ModelError,
    builtin,
    model_from_dict,
    parse_model,
)

from conftest import make_model


def ev(text, **env):
    node = ex.parse_expression(text)
    xs = [env.get(f"x{i + 1}", 0.0) for i in range(3)]
    us = [env.get("u1", 0.0)]
    params = {k: v for k, v in env.items() if ex.classify(k)[0] == "param"}
    fn = ex.compile_vector([node], 3, 1, params, "t")
    return fn(xs, us)[0]


@pytest.mark.parametrize(
    "text, value",
    [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("2 ^ 3", 8.0),
        ("-2 ^ 2", -4.0),
        ("2 ^ -1", 0.5),
        ("8 / 4 / 2", 1.0),
        ("1 - 2 - 3", -4.0),
        ("hill(2, 3, 1)", 2.0),
        ("min(3, 1, 2) + max(1, 5)", 6.0),
        ("exp(0) + sin(0) + cos(0)", 2.0),
        ("1.5e1", 15.0),
    ],
)
def test_evaluation(text, value):
    assert ev(text) == pytest.approx(value, rel=0, abs=1e-15)


def test_variables_and_params():
    assert ev("k * x1 + u1", x1=2.0, u1=1.0, k=3.0) == 7.0
    node = ex.parse_expression("a*x2 + hill(x1, b, 1) - u1")
    assert ex.variables(node) == {"a", "b", "x1", "x2", "u1"}


def test_classify():
    assert ex.classify("x12") == ("state", 11)
    assert ex.classify("u2") == ("input", 1)
    assert ex.classify("x") == ("param", -1)
    assert ex.classify("theta1") == ("param", -1)


@pytest.mark.parametrize(
    "text, col",
    [("1 +", 4), ("(1 + 2", 7), ("2 ^ 1.5", 5), ("foo(1)", 1), ("1 $ 2", 3), ("min(1)", 1)],
)
def test_parse_errors_carry_position(text, col):
    with pytest.raises(ex.ExpressionError) as info:
        ex.parse_expression(text)
    assert info.value.line == 1
    assert info.value.column == col


def test_hill_matches_formula():
    for r in (0.0, 0.3, 2.0):
        assert ex.hill(r, 2.0, 0.5) == pytest.approx(2.0 * r / (1 + 0.5 * r))


def test_substitute_and_negate():
    node = ex.parse_expression("x1 * u1 + x2")
    out = ex.substitute(node, {"x1": ex.Var("x2"), "x2": ex.Var("x1")})
    fn = ex.compile_vector([out], 2, 1, {}, "s")
    assert fn([2.0, 3.0], [5.0])[0] == 3.0 * 5.0 + 2.0
    neg = ex.negate(ex.parse_expression("x1 - 1"))
    fn = ex.compile_vector([neg], 1, 1, {}, "n")
    assert fn([3.0], [0.0])[0] == -2.0


leaf = st.one_of(
    st.sampled_from(["x1", "x2", "u1", "k"]),
    st.integers(0, 9).map(str),
    st.floats(0.1, 5.0).map(lambda v: f"{v:.3f}"),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from("+-*"), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"(-{c})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(children, children).map(lambda t: f"hill({t[0]}, 1, {t[1]} * {t[1]})"),
        children.map(lambda c: f"sin({c})"),
    )


@settings(max_examples=200, deadline=None)
@given(st.recursive(leaf, _combine, max_leaves=8), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_to_text_round_trip(text, a, b, c):
    node = ex.parse_expression(text)
    again = ex.parse_expression(ex.to_text(node))
    env = dict(x1=a, x2=b, u1=c, k=0.7)
    try:
        want = ev(text, **env)
    except (ZeroDivisionError, OverflowError):
        return
    got = ev(ex.to_text(node), **env)
    assert got == want or (math.isnan(got) and math.isnan(want))
    assert ex.to_text(again) == ex.to_text(node)


def test_parse_model_linear():
    m = make_model(["-x1 + u1"], lo=[0.0], hi=[1.0])
    assert (m.n, m.m, m.p) == (1, 1, 1)
    np.testing.assert_allclose(m.rhs([0.5], [1.0]), [0.5])


def test_builtin_mapk_stage_shape():
    m = builtin("mapk_stage")
    assert (m.n, m.m, m.p) == (2, 1, 1)
    assert m.orders.state.eps == (1, 0)
    assert m.orders.input.eps == (0,)


def test_builtin_names_all_load():
    for name in BUILTIN_NAMES:
        m = builtin(name)
        assert m.name == name


def test_mapk_figure4_origin():
    m = builtin("mapk_figure4")
    np.testing.assert_allclose(m.rhs([0.0, 0.0], [1.0]), [2 / 3, 1 / 2], atol=1e-15)


def test_mapk_figure4_matches_written_equations():
    m = builtin("mapk_figure4")
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, y = rng.dirichlet([1, 1, 1])[:2]
        want = [
            -x / (1 + x) + 2 * (1 - x - y) / (3 - x - y),
            (1 - x - y) / (2 - x - y) - 2 * y / (2 + y),
        ]
        np.testing.assert_allclose(m.rhs([x, y], [1.0]), want, atol=1e-14)


def test_mapk_stage_equals_figure4_at_unit_input():
    s, f = builtin("mapk_stage"), builtin("mapk_figure4")
    for pt in ([0.1, 0.2], [0.5, 0.4], [0.0, 1.0]):
        np.testing.assert_allclose(s.rhs(pt, [1.0]), f.rhs(pt, [1.0]), atol=1e-14)


def test_linear_toy():
    m = builtin("linear_toy_pos")
    np.testing.assert_allclose(m.rhs([1.0], [2.0]), [0.0])


def test_builtin_overrides():
    m = builtin("linear_toy_pos", {"k": 4.0})
    np.testing.assert_allclose(m.rhs([1.0], [2.0]), [-2.0])
    with pytest.raises(ModelError):
        builtin("linear_toy_pos", {"nope": 1.0})
    with pytest.raises(ModelError):
        builtin("no_such_model")


def test_undeclared_state_variable():
    with pytest.raises(ModelError, match="x3"):
        make_model(["x3", "x1"])


def test_undeclared_parameter():
    with pytest.raises(ModelError, match="gamma"):
        make_model(["-gamma * x1"])


def test_output_may_not_use_inputs():
    with pytest.raises(ModelError):
        make_model(["-x1"], h=["x1 + u1"])


def test_non_finite_at_load():
    with pytest.raises(ModelError):
        make_model(["1 / (x1 - x1)"])


def test_dimension_mismatch():
    d = json.loads(builtin("linear_toy_pos").to_json())
    d["n"] = 2
    with pytest.raises(ModelError):
        model_from_dict(d)


def test_parse_model_json_error_position():
    with pytest.raises(ModelError) as info:
        parse_model('{"n": 1,\n  "m": }')
    assert info.value.line == 2


def test_expression_error_reports_field():
    d = json.loads(builtin("linear_toy_pos").to_json())
    d["f"] = ["-x1 +* u1"]
    with pytest.raises((ModelError, ex.ExpressionError)) as info:
        model_from_dict(d)
    assert "f" in str(info.value)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_json_round_trip(name):
    m = builtin(name)
    again = parse_model(m.to_json())
    rng = np.random.default_rng(0)
    xs = m.state_domain.sample_interior(rng, 20)
    us = m.input_domain.sample(rng, 20)
    for x, u in zip(xs, us):
        np.testing.assert_array_equal(m.rhs(x, u), again.rhs(x, u))
        np.testing.assert_array_equal(m.output(x), again.output(x))


def test_rhs_raises_evaluation_error():
    m = make_model(["1 / x1"], lo=[0.5], hi=[1.0])
    with pytest.raises(EvaluationError):
        m.rhs([0.0], [0.0])
