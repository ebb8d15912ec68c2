import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjhomog.expressions import (
    BinOp,
    Call,
    ExpressionError,
    Neg,
    Num,
    Var,
    evaluate,
    parse_expression,
    screen_intervals,
    smoothstep,
    unparse,
)


class TestEvaluation:
    def test_quadratic_sum(self):
        e = parse_expression("x1^2/2 + x2^2/2")
        assert e(x1=1.0, x2=2.0) == pytest.approx(2.5)

    def test_reference_bump_shape(self):
        # value 1 at radius <= 1/8 after the documented 1 - smoothstep composition
        e = parse_expression("smoothstep(1/8, 1/4, sqrt((x1-1/2)^2+(x2-1/2)^2))")
        for r, want in [(0.0, 0.0), (0.125, 0.0), (0.25, 1.0), (0.5, 1.0)]:
            got = e(x1=0.5 + r, x2=0.5)
            assert got == pytest.approx(want, abs=1e-12)
            assert 1.0 - got == pytest.approx(
                1.0 - smoothstep(0.125, 0.25, r), abs=1e-12
            )
        mid = e(x1=0.5 + 0.1875, x2=0.5)
        assert mid == pytest.approx(0.5)

    def test_pi_constant(self):
        assert parse_expression("cos(2*pi)")() == pytest.approx(1.0)

    def test_vectorized_evaluation(self):
        e = parse_expression("min(x1, x2) + abs(x1 - x2)")
        x1 = np.array([1.0, -2.0, 3.0])
        x2 = np.array([0.5, 1.0, 3.0])
        np.testing.assert_allclose(e(x1=x1, x2=x2), [1.0, 1.0, 3.0])

    def test_division(self):
        assert parse_expression("1/4")() == pytest.approx(0.25)


class TestPrecedence:
    def test_power_binds_tighter_than_product(self):
        assert parse_expression("2*3^2")() == 18.0

    def test_power_is_right_associative(self):
        assert parse_expression("2^3^2")() == 512.0

    def test_unary_minus_below_power(self):
        assert parse_expression("-x1^2")(x1=3.0) == -9.0

    def test_product_over_sum(self):
        assert parse_expression("2+3*4")() == 14.0

    def test_parentheses(self):
        assert parse_expression("(2+3)*4")() == 20.0


class TestErrors:
    def test_min_is_binary(self):
        with pytest.raises(ExpressionError, match="min takes 2 arguments") as exc:
            parse_expression("min(x1, x2, 3)")
        assert exc.value.offset == 0

    def test_unknown_identifier_offset(self):
        with pytest.raises(ExpressionError, match="unknown identifier 'foo'") as exc:
            parse_expression("x1 + foo")
        assert exc.value.offset == 5

    def test_unbalanced_open(self):
        with pytest.raises(ExpressionError, match="unbalanced|unexpected end"):
            parse_expression("(x1 + 2")

    def test_unbalanced_close(self):
        with pytest.raises(ExpressionError, match="unbalanced parentheses"):
            parse_expression("x1 + 2)")

    def test_empty_expression(self):
        with pytest.raises(ExpressionError):
            parse_expression("   ")

    def test_unknown_character(self):
        with pytest.raises(ExpressionError, match="unexpected character"):
            parse_expression("x1 @ 2")


class TestScreening:
    BOX = {"x1": (-1.0, 1.0), "x2": (-1.0, 1.0), "t": (0.0, 1.0)}

    def test_division_by_spanning_interval_rejected(self):
        with pytest.raises(ExpressionError, match="division"):
            screen_intervals(parse_expression("1/(x1 - x2)"), self.BOX)

    def test_division_by_positive_interval_ok(self):
        lo, hi = screen_intervals(parse_expression("1/(2 + x1)"), self.BOX)
        assert lo == pytest.approx(1 / 3)
        assert hi == pytest.approx(1.0)

    def test_sqrt_of_possibly_negative_rejected(self):
        with pytest.raises(ExpressionError, match="square root"):
            screen_intervals(parse_expression("sqrt(x1)"), self.BOX)

    def test_sqrt_of_square_ok(self):
        screen_intervals(parse_expression("sqrt(x1^2 + 1)"), self.BOX)

    def test_fractional_power_of_negative_rejected(self):
        with pytest.raises(ExpressionError, match="fractional power"):
            screen_intervals(parse_expression("x1^0.5"), self.BOX)

    def test_output_interval_encloses_samples(self, rng):
        e = parse_expression("sin(x1)*x2 + max(x1, x2)^2")
        lo, hi = screen_intervals(e, self.BOX)
        for x1, x2 in rng.uniform(-1, 1, size=(100, 2)):
            v = e(x1=x1, x2=x2)
            assert lo - 1e-12 <= v <= hi + 1e-12

    def test_smoothstep_equal_edges_rejected(self):
        with pytest.raises(ExpressionError, match="smoothstep"):
            screen_intervals(parse_expression("smoothstep(x1, x1, x2)"), self.BOX)


# -- round-trip properties ---------------------------------------------------

_leaf = st.one_of(
    st.floats(0.0, 100.0, allow_nan=False).map(Num),
    st.sampled_from(["x1", "x2", "t"]).map(Var),
)


def _ast(depth: int):
    if depth == 0:
        return _leaf
    sub = _ast(depth - 1)
    return st.one_of(
        _leaf,
        st.builds(Neg, sub),
        st.builds(BinOp, st.sampled_from("+-*/^"), sub, sub),
        st.builds(lambda f, a: Call(f, (a,)), st.sampled_from(["sin", "cos", "abs"]), sub),
        st.builds(lambda f, a, b: Call(f, (a, b)), st.sampled_from(["min", "max"]), sub, sub),
    )


@given(node=_ast(3))
@settings(max_examples=300, deadline=None)
def test_unparse_reparses_to_identical_ast(node):
    text = unparse(node)
    assert parse_expression(text).root == node


@given(
    text=st.sampled_from(
        [
            "x1^2/2 + x2^2/2",
            "1 - smoothstep(1/8, 1/4, abs(x1))",
            "-x1 + 2*-x2",
            "2^-2",
            "max(sin(pi*x1), cos(pi*x2))",
        ]
    )
)
def test_round_trip_of_sources(text):
    first = parse_expression(text).root
    again = parse_expression(unparse(first)).root
    assert first == again
