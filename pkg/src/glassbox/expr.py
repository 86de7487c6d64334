"""Expression trees over event fields: type checking, a reference interpreter,
a closure compiler for the hot path, and canonical formatting.

All arithmetic is on Python ints (monetary values are minor units) and is
bounded to the signed 64-bit range; leaving it is an overflow fault.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Union

from .diagnostics import Diagnostic, SourceSpan

INT = "int"
DECIMAL = "decimal"
STRING = "string"
BOOL = "bool"
TYPES = (INT, DECIMAL, STRING, BOOL)
NUMERIC = frozenset((INT, DECIMAL))
SECTIONS = ("in", "out", "env")
SIDES = ("a", "b")

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

ARITH_OPS = ("+", "-", "*", "/")
COMPARE_OPS = ("==", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("and", "or", "implies")
BINARY_OPS = ARITH_OPS + COMPARE_OPS + BOOL_OPS
UNARY_OPS = ("not", "neg", "abs")


# --------------------------------------------------------------------------
# Tree
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Any
    type: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class FieldRef:
    section: str
    name: str
    side: str | None = None
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    @property
    def path(self) -> str:
        base = f"{self.section}.{self.name}"
        return f"{self.side}.{base}" if self.side else base


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Bucket:
    operand: "Expr"
    width: int
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


Expr = Union[Literal, FieldRef, Unary, Binary, Bucket]


def field_refs(expr: Expr) -> list[FieldRef]:
    """Field references in left-to-right order, duplicates removed."""
    seen: dict[str, FieldRef] = {}

    def walk(e: Expr) -> None:
        if isinstance(e, FieldRef):
            seen.setdefault(e.path, e)
        elif isinstance(e, Unary):
            walk(e.operand)
        elif isinstance(e, Binary):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, Bucket):
            walk(e.operand)

    walk(expr)
    return list(seen.values())


def mirror(expr: Expr) -> Expr:
    """Swap the a/b sides of every field reference."""
    if isinstance(expr, FieldRef):
        if expr.side is None:
            return expr
        return FieldRef(expr.section, expr.name, "b" if expr.side == "a" else "a")
    if isinstance(expr, Unary):
        return Unary(expr.op, mirror(expr.operand))
    if isinstance(expr, Binary):
        return Binary(expr.op, mirror(expr.left), mirror(expr.right))
    if isinstance(expr, Bucket):
        return Bucket(mirror(expr.operand), expr.width)
    return expr


def sides_of(expr: Expr) -> set[str | None]:
    return {ref.side for ref in field_refs(expr)}


# --------------------------------------------------------------------------
# Faults
# --------------------------------------------------------------------------


class EvaluationFault(Exception):
    """Evaluation could not produce a value."""


class MissingField(EvaluationFault):
    def __init__(self, path: str):
        super().__init__(f"missing field {path}")
        self.path = path


class ArithmeticOverflow(EvaluationFault):
    pass


class DivisionByZero(EvaluationFault):
    pass


class TypeFault(EvaluationFault):
    """Only reachable for expressions that were never type checked."""


# --------------------------------------------------------------------------
# Type checking
# --------------------------------------------------------------------------


def _numeric_result(lt: str, rt: str) -> str:
    return DECIMAL if DECIMAL in (lt, rt) else INT


def typecheck(
    expr: Expr,
    schema: Mapping[tuple[str, str], str],
    diagnostics: list[Diagnostic],
    *,
    pairwise: bool = False,
    owner: str = "",
) -> str | None:
    """Infer the type of ``expr`` under ``schema`` (``(section, name) -> type``).

    Problems are appended to ``diagnostics``; the return value is ``None`` when
    the type could not be determined.
    """
    owners = (owner,) if owner else ()

    def err(node: Expr, code: str, msg: str) -> None:
        diagnostics.append(Diagnostic("error", code, msg, owners, node.span))

    def check(e: Expr) -> str | None:
        if isinstance(e, Literal):
            return e.type
        if isinstance(e, FieldRef):
            if pairwise and e.side is None:
                err(e, "type", f"'{e.path}' must be qualified with a. or b. in a pairwise clause")
                return None
            if not pairwise and e.side is not None:
                err(e, "type", f"'{e.path}': a./b. references are only allowed in pairwise clauses")
                return None
            t = schema.get((e.section, e.name))
            if t is None:
                err(e, "unknown-field", f"field '{e.section}.{e.name}' is not declared in the schema")
            return t
        if isinstance(e, Bucket):
            t = check(e.operand)
            if e.width <= 0:
                err(e, "type", "bucket width must be a positive integer")
            if t is not None and t not in NUMERIC:
                err(e, "type", f"bucket() needs a numeric operand, got {t}")
                return None
            return INT
        if isinstance(e, Unary):
            t = check(e.operand)
            if t is None:
                return None
            if e.op == "not":
                if t != BOOL:
                    err(e, "type", f"'not' needs a bool operand, got {t}")
                    return None
                return BOOL
            if t not in NUMERIC:
                err(e, "type", f"'{e.op}' needs a numeric operand, got {t}")
                return None
            return t
        if isinstance(e, Binary):
            lt, rt = check(e.left), check(e.right)
            if e.op == "/":
                if not (isinstance(e.right, Literal) and e.right.type in NUMERIC and e.right.value != 0):
                    err(e, "type", "division is only allowed by a nonzero numeric literal")
            if lt is None or rt is None:
                return None
            if e.op in ARITH_OPS:
                if lt not in NUMERIC or rt not in NUMERIC:
                    err(e, "type", f"'{e.op}' needs numeric operands, got {lt} and {rt}")
                    return None
                return _numeric_result(lt, rt)
            if e.op in COMPARE_OPS:
                if lt in NUMERIC and rt in NUMERIC:
                    return BOOL
                if e.op in ("==", "!=") and lt == rt:
                    return BOOL
                if lt != rt:
                    err(e, "type", f"cannot compare {lt} with {rt}")
                else:
                    err(e, "type", f"'{e.op}' is only defined on numeric operands, got {lt}")
                return None
            if lt != BOOL or rt != BOOL:
                err(e, "type", f"'{e.op}' needs bool operands, got {lt} and {rt}")
                return None
            return BOOL
        raise TypeError(f"not an expression: {e!r}")

    return check(expr)


# --------------------------------------------------------------------------
# Reference interpreter
# --------------------------------------------------------------------------


def _bounded(v: int) -> int:
    if v < INT_MIN or v > INT_MAX:
        raise ArithmeticOverflow(f"integer overflow: {v}")
    return v


def _is_num(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def eval_expression(expr: Expr, bindings: Mapping[str, Any]) -> Any:
    """Evaluate ``expr`` against ``bindings`` keyed by field path
    (``"in.age"``, ``"a.out.decision"``). Absent keys raise :class:`MissingField`.

    Evaluation is strict: every operand is evaluated, so a fault anywhere in
    the tree is a fault of the whole expression.
    """
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, FieldRef):
        try:
            return bindings[expr.path]
        except KeyError:
            raise MissingField(expr.path) from None
    if isinstance(expr, Bucket):
        v = eval_expression(expr.operand, bindings)
        if not _is_num(v):
            raise TypeFault("bucket of non-number")
        return v // expr.width
    if isinstance(expr, Unary):
        v = eval_expression(expr.operand, bindings)
        if expr.op == "not":
            if not isinstance(v, bool):
                raise TypeFault("not of non-bool")
            return not v
        if not _is_num(v):
            raise TypeFault(f"{expr.op} of non-number")
        return _bounded(-v if expr.op == "neg" else abs(v))
    if isinstance(expr, Binary):
        lv = eval_expression(expr.left, bindings)
        rv = eval_expression(expr.right, bindings)
        op = expr.op
        if op in BOOL_OPS:
            if not (isinstance(lv, bool) and isinstance(rv, bool)):
                raise TypeFault(f"{op} of non-bool")
            if op == "and":
                return lv and rv
            if op == "or":
                return lv or rv
            return (not lv) or rv
        if op in ARITH_OPS:
            if not (_is_num(lv) and _is_num(rv)):
                raise TypeFault(f"{op} of non-number")
            if op == "+":
                return _bounded(lv + rv)
            if op == "-":
                return _bounded(lv - rv)
            if op == "*":
                return _bounded(lv * rv)
            if rv == 0:
                raise DivisionByZero("division by zero")
            return _bounded(lv // rv)
        if op == "==":
            return lv == rv
        if op == "!=":
            return lv != rv
        if not (_is_num(lv) and _is_num(rv)):
            raise TypeFault(f"{op} of non-number")
        if op == "<":
            return lv < rv
        if op == "<=":
            return lv <= rv
        if op == ">":
            return lv > rv
        return lv >= rv
    raise TypeError(f"not an expression: {expr!r}")


# --------------------------------------------------------------------------
# Compiler
# --------------------------------------------------------------------------

# An accessor takes (a, b): the event bound to unqualified and ``a.`` refs,
# and the event bound to ``b.`` refs (None outside pairwise clauses).
Compiled = Callable[[Any, Any], Any]

_SECTION_ATTR = {"in": "inp", "out": "out", "env": "env"}


def _mul_const(lf, c):
    def mul_c(a, b):
        v = lf(a, b) * c
        if v < INT_MIN or v > INT_MAX:
            raise ArithmeticOverflow(f"integer overflow: {v}")
        return v
    return mul_c


# Specialisations for a literal right operand (the common `x * 10`, `x == "grant"`).
_CONST_RIGHT = {
    "*": _mul_const,
    "==": lambda lf, c: lambda a, b: lf(a, b) == c,
    "!=": lambda lf, c: lambda a, b: lf(a, b) != c,
    "<": lambda lf, c: lambda a, b: lf(a, b) < c,
    "<=": lambda lf, c: lambda a, b: lf(a, b) <= c,
    ">": lambda lf, c: lambda a, b: lf(a, b) > c,
    ">=": lambda lf, c: lambda a, b: lf(a, b) >= c,
}


def compile_expression(expr: Expr) -> Compiled:
    """Compile a *type-checked* expression into a closure over events.

    Events are objects with ``inp``, ``out`` and ``env`` dict attributes.
    Semantics match :func:`eval_expression` exactly.
    """
    if isinstance(expr, Literal):
        value = expr.value
        return lambda a, b: value
    if isinstance(expr, FieldRef):
        attr = _SECTION_ATTR[expr.section]
        name, path = expr.name, expr.path
        if expr.side == "b":
            def ref_b(a, b):
                try:
                    return getattr(b, attr)[name]
                except KeyError:
                    raise MissingField(path) from None
            return ref_b
        # one closure per section avoids a getattr on the hot path
        if attr == "inp":
            def ref_in(a, b):
                try:
                    return a.inp[name]
                except KeyError:
                    raise MissingField(path) from None
            return ref_in
        if attr == "out":
            def ref_out(a, b):
                try:
                    return a.out[name]
                except KeyError:
                    raise MissingField(path) from None
            return ref_out

        def ref(a, b):
            try:
                return getattr(a, attr)[name]
            except KeyError:
                raise MissingField(path) from None
        return ref
    if isinstance(expr, Bucket):
        f, w = compile_expression(expr.operand), expr.width
        return lambda a, b: f(a, b) // w
    if isinstance(expr, Unary):
        f = compile_expression(expr.operand)
        if expr.op == "not":
            return lambda a, b: not f(a, b)
        if expr.op == "neg":
            return lambda a, b: _bounded(-f(a, b))
        return lambda a, b: _bounded(abs(f(a, b)))
    if isinstance(expr, Binary):
        lf, rf = compile_expression(expr.left), compile_expression(expr.right)
        op = expr.op
        if isinstance(expr.right, Literal) and op in _CONST_RIGHT:
            return _CONST_RIGHT[op](lf, expr.right.value)
        if op == "and":
            def and_(a, b):
                lv = lf(a, b)
                rv = rf(a, b)
                return lv and rv
            return and_
        if op == "or":
            def or_(a, b):
                lv = lf(a, b)
                rv = rf(a, b)
                return lv or rv
            return or_
        if op == "implies":
            def implies(a, b):
                lv = lf(a, b)
                rv = rf(a, b)
                return (not lv) or rv
            return implies
        if op == "+":
            return lambda a, b: _bounded(lf(a, b) + rf(a, b))
        if op == "-":
            return lambda a, b: _bounded(lf(a, b) - rf(a, b))
        if op == "*":
            def mul(a, b):
                v = lf(a, b) * rf(a, b)
                if v < INT_MIN or v > INT_MAX:
                    raise ArithmeticOverflow(f"integer overflow: {v}")
                return v
            return mul
        if op == "/":
            # divisor is a nonzero literal after type checking
            def div(a, b):
                lv = lf(a, b)
                rv = rf(a, b)
                if rv == 0:
                    raise DivisionByZero("division by zero")
                return _bounded(lv // rv)
            return div
        if op == "==":
            return lambda a, b: lf(a, b) == rf(a, b)
        if op == "!=":
            return lambda a, b: lf(a, b) != rf(a, b)
        if op == "<":
            return lambda a, b: lf(a, b) < rf(a, b)
        if op == "<=":
            return lambda a, b: lf(a, b) <= rf(a, b)
        if op == ">":
            return lambda a, b: lf(a, b) > rf(a, b)
        if op == ">=":
            return lambda a, b: lf(a, b) >= rf(a, b)
    raise TypeError(f"not an expression: {expr!r}")


# --------------------------------------------------------------------------
# Canonical text
# --------------------------------------------------------------------------

_PREC = {
    "implies": 1,
    "or": 2,
    "and": 3,
    "not": 4,
    "==": 5, "!=": 5, "<": 5, "<=": 5, ">": 5, ">=": 5,
    "+": 6, "-": 6,
    "*": 7, "/": 7,
    "neg": 8,
}
_ATOM = 9


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op in ("not", "neg"):
        return _PREC[e.op]
    if isinstance(e, Literal) and e.type in NUMERIC and e.value < 0:
        return _PREC["neg"]
    return _ATOM


def format_literal(lit: Literal) -> str:
    if lit.type == BOOL:
        return "true" if lit.value else "false"
    if lit.type == STRING:
        return '"' + lit.value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if lit.type == DECIMAL:
        sign = "-" if lit.value < 0 else ""
        major, minor = divmod(abs(lit.value), 100)
        return f"{sign}{major}.{minor:02d}m"
    return str(lit.value)


def format_expression(expr: Expr) -> str:
    """Canonical, minimally parenthesised rendering; re-parses to ``expr``."""

    def wrap(e: Expr, needs: bool) -> str:
        s = fmt(e)
        return f"({s})" if needs else s

    def fmt(e: Expr) -> str:
        if isinstance(e, Literal):
            return format_literal(e)
        if isinstance(e, FieldRef):
            return e.path
        if isinstance(e, Bucket):
            return f"bucket({fmt(e.operand)}, {e.width})"
        if isinstance(e, Unary):
            if e.op == "abs":
                return f"abs({fmt(e.operand)})"
            if e.op == "not":
                return "not " + wrap(e.operand, _prec(e.operand) < _PREC["not"])
            # "-5" would re-parse as a negative literal
            return "-" + wrap(e.operand, _prec(e.operand) < _PREC["neg"] or isinstance(e.operand, Literal))
        p = _PREC[e.op]
        lp, rp = _prec(e.left), _prec(e.right)
        if e.op == "implies":
            left_paren, right_paren = lp <= p, rp < p
        elif p == 5:
            left_paren, right_paren = lp <= p, rp <= p
        else:
            left_paren, right_paren = lp < p, rp <= p
        return f"{wrap(e.left, left_paren)} {e.op} {wrap(e.right, right_paren)}"

    return fmt(expr)
