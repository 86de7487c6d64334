from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_event
from gen import TRACE_SCHEMA, expression, fields_by_type, random_records, to_lines
from glassbox.expr import (
    BOOL,
    INT,
    INT_MAX,
    ArithmeticOverflow,
    Binary,
    Bucket,
    EvaluationFault,
    FieldRef,
    Literal,
    MissingField,
    TypeFault,
    compile_expression,
    eval_expression,
    format_expression,
    typecheck,
)
from glassbox.parser import Parser
from glassbox.trace import Trace


def parse_expr(text):
    p = Parser(text)
    e = p.parse_expr()
    assert p.tok.kind == "EOF"
    return e


def test_thirty_percent_rule_is_exact():
    e = parse_expr("in.monthly_instalment * 10 < in.expected_monthly_income * 3")
    assert eval_expression(e, {"in.monthly_instalment": 80000, "in.expected_monthly_income": 300000}) is True
    # 900000 < 900000 is false: the boundary is excluded
    assert eval_expression(e, {"in.monthly_instalment": 90000, "in.expected_monthly_income": 300000}) is False


def test_age_brackets_partition_by_floor():
    e = parse_expr("bucket(a.in.age, 5) == bucket(b.in.age, 5)")
    assert eval_expression(e, {"a.in.age": 31, "b.in.age": 34}) is True
    assert eval_expression(e, {"a.in.age": 31, "b.in.age": 35}) is False


def test_missing_field_is_a_distinct_fault():
    e = parse_expr('out.decision == "grant"')
    with pytest.raises(MissingField) as info:
        eval_expression(e, {})
    assert info.value.path == "out.decision"


@pytest.mark.parametrize(
    "text, expected",
    [
        ("7 / 2", 3),
        ("-7 / 2", -4),
        ("7 / -2", -4),
        ("bucket(-1, 5)", -1),
        ("abs(-3) + -(2)", 1),
        ("true implies false", False),
        ("false implies false", True),
        ("not true or true", True),
        ("1 + 2 * 3", 7),
        ("12.50m", 1250),
        ("-0.05m", -5),
    ],
)
def test_literal_arithmetic(text, expected):
    assert eval_expression(parse_expr(text), {}) == expected


def test_overflow_is_a_fault():
    e = parse_expr("in.x * 4")
    with pytest.raises(ArithmeticOverflow):
        eval_expression(e, {"in.x": INT_MAX // 2})
    with pytest.raises(ArithmeticOverflow):
        compile_expression(e)(make_event(inp={"x": INT_MAX // 2}), None)


def test_strict_evaluation_propagates_faults_through_or():
    # even though the left side is true, the missing right operand faults
    e = parse_expr("true or in.flag")
    with pytest.raises(MissingField):
        eval_expression(e, {})


def test_typecheck_rejects_numeric_string_comparison():
    diags = []
    typecheck(parse_expr('in.income < "abc"'), {("in", "income"): INT}, diags)
    assert [d.code for d in diags] == ["type"]
    assert "int" in diags[0].message and "string" in diags[0].message


def test_typecheck_division_only_by_nonzero_literal():
    schema = {("in", "x"): INT}
    for text in ("in.x / in.x", "in.x / 0"):
        diags = []
        typecheck(parse_expr(text), schema, diags)
        assert any("division" in d.message for d in diags), text


def test_pairwise_references_only_in_pairwise_clauses():
    schema = {("in", "x"): INT}
    diags = []
    typecheck(parse_expr("a.in.x == 1"), schema, diags)
    assert diags
    diags = []
    typecheck(parse_expr("in.x == 1"), schema, diags, pairwise=True)
    assert diags


@pytest.mark.parametrize(
    "text",
    ["a < b < c", "1 == 2 == 3"],
)
def test_comparisons_do_not_chain(text):
    from glassbox import SpecError

    with pytest.raises(SpecError):
        parse_expr(text.replace("a", "in.a").replace("b", "in.b").replace("c", "in.c"))


def test_format_keeps_negated_literal_distinct_from_negative_literal():
    from glassbox.expr import Unary

    neg = Unary("neg", Literal(5, INT))
    assert format_expression(neg) == "-(5)"
    assert parse_expr(format_expression(neg)) == neg
    assert parse_expr("-5") == Literal(-5, INT)


FIELDS = fields_by_type(TRACE_SCHEMA)
SCHEMA = {(f.section, f.name): f.type for f in TRACE_SCHEMA}
EVENTS = list(Trace(to_lines(random_records(random.Random(5), 60)), SCHEMA))


def _outcome(fn, *args):
    try:
        return ("ok", fn(*args))
    except EvaluationFault as fault:
        return (type(fault).__name__, str(fault))


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False), st.sampled_from(("bool", "int")))
def test_compiled_matches_interpreter(rng, kind):
    expr = expression(rng, BOOL if kind == "bool" else INT, FIELDS, depth=4)
    compiled = compile_expression(expr)
    for ev in EVENTS[:20]:
        env = {f"{s}.{n}": v for s in ("in", "out", "env") for n, v in ev.section(s).items()}
        assert _outcome(compiled, ev, None) == _outcome(eval_expression, expr, env)


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_well_typed_expressions_never_type_fault(rng):
    expr = expression(rng, BOOL, FIELDS, depth=4)
    diags = []
    assert typecheck(expr, SCHEMA, diags) == BOOL and not diags
    for ev in EVENTS:
        env = {f"{s}.{n}": v for s in ("in", "out", "env") for n, v in ev.section(s).items()}
        try:
            eval_expression(expr, env)
        except TypeFault:  # pragma: no cover - the property under test
            pytest.fail(f"type fault on {format_expression(expr)}")
        except EvaluationFault:
            pass


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_format_then_parse_is_identity(rng):
    expr = expression(rng, BOOL, FIELDS, depth=4)
    assert parse_expr(format_expression(expr)) == expr


def test_bucket_and_field_refs_format():
    e = Binary("==", Bucket(FieldRef("in", "age", "a"), 5), Bucket(FieldRef("in", "age", "b"), 5))
    assert format_expression(e) == "bucket(a.in.age, 5) == bucket(b.in.age, 5)"
