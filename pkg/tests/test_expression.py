import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l1heat.nonlinearity import ExpressionSyntaxError, NonlinearityError, parse
from l1heat.nonlinearity.expr import compile_expression

U = np.array([-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.0])


@pytest.mark.parametrize("text, expected", [
    ("u", lambda u: u),
    ("2*u - u/4", lambda u: 2 * u - u / 4),
    ("-u + +u", lambda u: 0 * u),
    ("pow(abs(u),1.5)*sign(u)", lambda u: np.abs(u) ** 0.5 * u),
    ("odd_extend(min(pow(u,2),pow(u,4)))", lambda u: np.sign(u) * np.minimum(u ** 2, u ** 4)),
    ("max(u, 0)*exp(u) - max(u, 0)", lambda u: np.maximum(u, 0) * (np.exp(u) - 1)),
    ("u*ln(1 + abs(u))", lambda u: u * np.log1p(np.abs(u))),
    ("1.5e-1*u", lambda u: 0.15 * u),
    ("u*u*u", lambda u: u ** 3),
    ("(u - (u))", lambda u: 0 * u),
])
def test_expression_values(text, expected):
    assert np.allclose(compile_expression(text)(U), expected(U), rtol=1e-14, atol=0)


def test_precedence_and_associativity():
    f = compile_expression("8/2/2 - 1 - 1 + 2*3*u")
    assert np.allclose(f(np.array([1.0])), [2 - 1 - 1 + 6])


def test_odd_extension_is_odd():
    f = compile_expression("odd_extend(pow(u, 2) + u)")
    assert np.allclose(f(U), -f(-U))
    assert np.allclose(f(np.array([2.0])), [6.0])


@pytest.mark.parametrize("text, line, column", [
    ("pow(u,", 1, 7),
    ("u ** 2", 1, 4),
    ("sqrt(u)", 1, 1),
    ("u +\n  * u", 2, 3),
    ("u $ 2", 1, 3),
    ("min(u)", 1, 1),
    ("(u", 1, 3),
])
def test_syntax_errors_carry_position(text, line, column):
    with pytest.raises(ExpressionSyntaxError) as info:
        compile_expression(text)
    assert (info.value.line, info.value.column) == (line, column)
    assert str(info.value).startswith(f"{line}:{column}:")


@pytest.mark.parametrize("text", ["u+1", "exp(u)", "abs(u) + 2"])
def test_nonzero_at_origin_rejected(text):
    with pytest.raises(NonlinearityError, match="f\\(0\\)"):
        parse(text)


def test_nonfinite_probe_rejected():
    with pytest.raises(NonlinearityError, match="non-finite"):
        parse("ln(abs(u))*u")


def test_parse_records_source():
    nl = parse("pow(abs(u),1.5)*sign(u)")
    assert nl.source == {"expr": "pow(abs(u),1.5)*sign(u)"}
    assert nl(0.0) == 0.0


@given(st.floats(-50, 50), st.floats(0.1, 5))
def test_linear_combination_property(a, c):
    f = compile_expression(f"{c!r}*u")
    assert f(np.array([a]))[0] == pytest.approx(c * a, rel=1e-14, abs=1e-300)
