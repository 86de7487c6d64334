"""Lexer and recursive-descent parser for ``.gbx`` spec files."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .diagnostics import Diagnostic, SourceSpan, SpecError
from .expr import (
    BOOL,
    DECIMAL,
    INT,
    SECTIONS,
    STRING,
    TYPES,
    Binary,
    Bucket,
    Expr,
    FieldRef,
    Literal,
    Unary,
)
from .model import (
    MODALITIES,
    REQUIREMENT_KINDS,
    RESERVED,
    WINDOW_UNITS,
    AllOf,
    AnyOf,
    Context,
    CountsAsEdge,
    FieldDecl,
    FieldWhitelistRequirement,
    Formula,
    GlassBoxSpec,
    Interpretation,
    Norm,
    NormLeaf,
    PairwiseConsistencyRequirement,
    PerEventRequirement,
    Value,
    Window,
    WindowDriftRequirement,
    WindowParityRequirement,
    validate_hierarchy,
)

# Diagnostics from validation that parse_spec treats as fatal. The rest
# (cycles, reachability, ranges) are left to validate_hierarchy's caller.
PARSE_TIME_CODES = frozenset(
    {
        "duplicate-id",
        "duplicate-field",
        "duplicate-interpretation",
        "unknown-reference",
        "unknown-field",
        "reserved-id",
        "type",
        "missing-clause",
        "schema",
    }
)


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT INT DECIMAL STRING OP EOF
    text: str
    value: object
    span: SourceSpan


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<decimal>[0-9]+(?:\.[0-9]{1,2})?m(?![A-Za-z0-9_]))
  | (?P<int>[0-9]+(?![A-Za-z0-9_.]))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\n]|\\["\\])*")
  | (?P<op>==|!=|<=|>=|[{}()\[\];,:.=<>+\-*/])
    """,
    re.VERBOSE,
)


class _ByteOffsets:
    def __init__(self, text: str):
        self.ascii = text.isascii()
        if not self.ascii:
            acc = [0]
            for ch in text:
                acc.append(acc[-1] + len(ch.encode("utf-8")))
            self.acc = acc

    def __call__(self, i: int) -> int:
        return i if self.ascii else self.acc[i]


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    offsets = _ByteOffsets(text)
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            ch = text[pos]
            span = SourceSpan(offsets(pos), offsets(pos + 1), line, col)
            if ch == '"':
                msg = "unterminated string or invalid escape (only \\\" and \\\\ are allowed)"
            elif ch.isdigit():
                msg = "malformed number (floating-point literals are not allowed; use minor units or the m suffix)"
            else:
                msg = f"unexpected character {ch!r}"
            raise SpecError([Diagnostic("error", "lexical", msg, (), span)])
        kind = m.lastgroup
        raw = m.group()
        span = SourceSpan(offsets(pos), offsets(m.end()), line, col)
        if kind == "decimal":
            body = raw[:-1]
            major, _, minor = body.partition(".")
            value = int(major) * 100 + int(minor.ljust(2, "0") if minor else 0)
            tokens.append(Token("DECIMAL", raw, value, span))
        elif kind == "int":
            tokens.append(Token("INT", raw, int(raw), span))
        elif kind == "ident":
            tokens.append(Token("IDENT", raw, raw, span))
        elif kind == "string":
            value = re.sub(r"\\([\"\\])", r"\1", raw[1:-1])
            tokens.append(Token("STRING", raw, value, span))
        elif kind == "op":
            tokens.append(Token("OP", raw, raw, span))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rindex("\n") + 1
        pos = m.end()
    eof = SourceSpan(offsets(n), offsets(n), line, n - line_start + 1)
    tokens.append(Token("EOF", "", None, eof))
    return tokens


def _join(a: SourceSpan | None, b: SourceSpan | None) -> SourceSpan | None:
    if a is None or b is None:
        return a or b
    return SourceSpan(a.start, b.end, a.line, a.column)


_CLAUSES_BY_KIND = {
    "per_event": {"when", "then"},
    "window_parity": {"window", "group_by", "outcome", "max_gap", "min_samples"},
    "pairwise_consistency": {"window", "similar", "consistent"},
    "window_drift": {"window", "rate", "max_delta"},
    "field_whitelist": {"section", "allow"},
}
_ALL_CLAUSES = set().union(*_CLAUSES_BY_KIND.values())


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    # -- token helpers ---------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != "EOF":
            self.i += 1
        return t

    def fail(self, msg: str, tok: Token | None = None, code: str = "syntax"):
        tok = tok or self.tok
        raise SpecError([Diagnostic("error", code, msg, (), tok.span)])

    def _describe(self, tok: Token) -> str:
        return "end of input" if tok.kind == "EOF" else f"'{tok.text}'"

    def at_op(self, op: str) -> bool:
        return self.tok.kind == "OP" and self.tok.text == op

    def at_word(self, word: str) -> bool:
        return self.tok.kind == "IDENT" and self.tok.text == word

    def expect_op(self, op: str) -> Token:
        if not self.at_op(op):
            self.fail(f"expected '{op}', found {self._describe(self.tok)}")
        return self.advance()

    def expect_word(self, word: str) -> Token:
        if not self.at_word(word):
            self.fail(f"expected '{word}', found {self._describe(self.tok)}")
        return self.advance()

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "IDENT":
            self.fail(f"expected {what}, found {self._describe(self.tok)}")
        if self.tok.text in RESERVED:
            self.fail(f"'{self.tok.text}' is a reserved word and cannot be used as {what}")
        return self.advance()

    def expect_int(self, what: str = "integer") -> Token:
        if self.tok.kind != "INT":
            self.fail(f"expected {what}, found {self._describe(self.tok)}")
        return self.advance()

    def optional_string(self) -> str:
        if self.tok.kind == "STRING":
            return self.advance().value  # type: ignore[return-value]
        return ""

    # -- top level -------------------------------------------------------

    def parse(self) -> GlassBoxSpec:
        if not self.at_word("glassbox"):
            self.fail("expected 'glassbox' header")
        self.advance()
        name = self.expect_ident("spec name").text
        self.expect_op("{")
        fields: list[FieldDecl] = []
        values: list[Value] = []
        contexts: list[Context] = []
        norms: list[Norm] = []
        requirements = []
        edges: list[CountsAsEdge] = []
        interps: list[Interpretation] = []
        while not self.at_op("}"):
            tok = self.tok
            if tok.kind != "IDENT":
                self.fail(f"expected a declaration, found {self._describe(tok)}")
            word = tok.text
            if word == "schema":
                fields.extend(self.parse_schema())
            elif word == "value":
                values.append(self.parse_value())
            elif word == "context":
                contexts.append(self.parse_context())
            elif word == "norm":
                norm, norm_edges = self.parse_norm()
                norms.append(norm)
                edges.extend(norm_edges)
            elif word == "joint":
                edges.append(self.parse_joint())
            elif word == "requirement":
                requirements.append(self.parse_requirement())
            elif word == "interpretation":
                interps.append(self.parse_interpretation())
            else:
                self.fail(f"unknown declaration '{word}'")
        self.advance()
        if self.tok.kind != "EOF":
            self.fail(f"unexpected {self._describe(self.tok)} after the closing brace")
        return GlassBoxSpec(
            name=name,
            fields=tuple(fields),
            values=tuple(values),
            contexts=tuple(contexts),
            norms=tuple(norms),
            requirements=tuple(requirements),
            counts_as=tuple(edges),
            interpretations=tuple(interps),
        )

    def parse_schema(self) -> list[FieldDecl]:
        self.advance()
        self.expect_op("{")
        out = []
        while not self.at_op("}"):
            start = self.tok
            if start.kind != "IDENT" or start.text not in SECTIONS:
                self.fail(f"expected a section (in, out, env), found {self._describe(start)}")
            self.advance()
            name = self.expect_ident("field name")
            self.expect_op(":")
            type_tok = self.tok
            if type_tok.kind != "IDENT" or type_tok.text not in TYPES:
                self.fail(f"expected a type ({', '.join(TYPES)}), found {self._describe(type_tok)}")
            self.advance()
            end = self.expect_op(";")
            out.append(FieldDecl(start.text, name.text, type_tok.text, _join(start.span, end.span)))
        self.advance()
        return out

    def parse_value(self) -> Value:
        start = self.advance()
        ident = self.expect_ident("value id")
        desc = self.optional_string()
        end = self.expect_op(";")
        return Value(ident.text, desc, _join(start.span, end.span))

    def parse_context(self) -> Context:
        start = self.advance()
        ident = self.expect_ident("context id")
        desc = self.optional_string()
        guard = None
        if self.at_word("when"):
            self.advance()
            guard = self.parse_expr()
        end = self.expect_op(";")
        return Context(ident.text, desc, guard, _join(start.span, end.span))

    def parse_norm(self) -> tuple[Norm, list[CountsAsEdge]]:
        start = self.advance()
        ident = self.expect_ident("norm id")
        modality = "obligation"
        if self.tok.kind == "IDENT" and self.tok.text in MODALITIES:
            modality = self.advance().text
        desc = self.optional_string()
        self.expect_op("{")
        edges = []
        while not self.at_op("}"):
            kw = self.expect_word("counts_as")
            target = self.expect_ident("counts_as target")
            self.expect_word("in")
            ctx = self.expect_ident("context id")
            end = self.expect_op(";")
            edges.append(CountsAsEdge((ident.text,), target.text, ctx.text, _join(kw.span, end.span)))
        end = self.advance()
        return Norm(ident.text, desc, modality, _join(start.span, end.span)), edges

    def parse_joint(self) -> CountsAsEdge:
        start = self.advance()
        self.expect_op("{")
        sources = [self.expect_ident("norm id").text]
        while self.at_op(","):
            self.advance()
            sources.append(self.expect_ident("norm id").text)
        self.expect_op("}")
        self.expect_word("counts_as")
        target = self.expect_ident("counts_as target")
        self.expect_word("in")
        ctx = self.expect_ident("context id")
        end = self.expect_op(";")
        return CountsAsEdge(tuple(sources), target.text, ctx.text, _join(start.span, end.span))

    def parse_rational(self) -> Fraction:
        num = self.expect_int("rational number")
        if self.at_op("/"):
            self.advance()
            den = self.expect_int("denominator")
            if den.value == 0:
                self.fail("zero denominator", den)
            return Fraction(num.value, den.value)  # type: ignore[arg-type]
        return Fraction(num.value)  # type: ignore[arg-type]

    def parse_requirement(self):
        start = self.advance()
        ident = self.expect_ident("requirement id")
        desc = self.optional_string()
        self.expect_op("{")
        kind: str | None = None
        fts: list[str] = []
        clauses: dict[str, object] = {}
        clause_tokens: dict[str, Token] = {}
        while not self.at_op("}"):
            tok = self.tok
            if tok.kind != "IDENT":
                self.fail(f"expected a requirement clause, found {self._describe(tok)}")
            word = tok.text
            self.advance()
            if word == "for_the_sake_of":
                fts.append(self.expect_ident("norm id").text)
            elif word == "kind":
                if kind is not None:
                    self.fail("duplicate 'kind' clause", tok)
                k = self.expect_ident("requirement kind")
                if k.text not in REQUIREMENT_KINDS:
                    self.fail(f"unknown requirement kind '{k.text}' (expected one of {', '.join(REQUIREMENT_KINDS)})", k)
                kind = k.text
            elif word in _ALL_CLAUSES:
                if word in clauses:
                    self.fail(f"duplicate '{word}' clause", tok)
                clause_tokens[word] = tok
                clauses[word] = self.parse_clause_body(word)
            else:
                self.fail(f"unknown requirement clause '{word}'", tok)
            self.expect_op(";")
        end = self.advance()
        span = _join(start.span, end.span)
        if kind is None:
            self.fail(f"requirement '{ident.text}' has no 'kind' clause", ident)
        for word, tok in clause_tokens.items():
            if word not in _CLAUSES_BY_KIND[kind]:
                self.fail(f"clause '{word}' is not valid for {kind} requirements", tok)
        common = dict(id=ident.text, for_the_sake_of=tuple(fts), description=desc, span=span)
        if kind == "per_event":
            return PerEventRequirement(**common, when=clauses.get("when"), then=clauses.get("then"))
        if kind == "window_parity":
            return WindowParityRequirement(
                **common,
                window=clauses.get("window"),
                group_by=clauses.get("group_by"),
                outcome=clauses.get("outcome"),
                max_gap=clauses.get("max_gap"),
                min_samples=clauses.get("min_samples", 30),
            )
        if kind == "pairwise_consistency":
            return PairwiseConsistencyRequirement(
                **common,
                window=clauses.get("window"),
                similar=clauses.get("similar"),
                consistent=clauses.get("consistent"),
            )
        if kind == "window_drift":
            return WindowDriftRequirement(
                **common,
                window=clauses.get("window"),
                rate=clauses.get("rate"),
                max_delta=clauses.get("max_delta"),
            )
        return FieldWhitelistRequirement(
            **common,
            section=clauses.get("section", "in"),
            allowed=tuple(clauses.get("allow", ())),
        )

    def parse_clause_body(self, word: str):
        if word in ("when", "then", "group_by", "outcome", "similar", "consistent", "rate"):
            return self.parse_expr()
        if word == "window":
            size = self.expect_int("window size").value
            unit = "events"
            if self.tok.kind == "IDENT":
                if self.tok.text not in WINDOW_UNITS:
                    self.fail(f"unknown window unit '{self.tok.text}' (expected one of {', '.join(WINDOW_UNITS)})")
                unit = self.advance().text
            return Window(size, unit)  # type: ignore[arg-type]
        if word in ("max_gap", "max_delta"):
            return self.parse_rational()
        if word == "min_samples":
            return self.expect_int("sample count").value
        if word == "section":
            tok = self.tok
            if tok.kind != "IDENT" or tok.text not in SECTIONS:
                self.fail(f"expected a section (in, out, env), found {self._describe(tok)}")
            return self.advance().text
        if word == "allow":
            names = [self.expect_ident("field name").text]
            while self.at_op(","):
                self.advance()
                names.append(self.expect_ident("field name").text)
            return names
        raise AssertionError(word)

    def parse_interpretation(self) -> Interpretation:
        start = self.advance()
        value = self.expect_ident("value id")
        self.expect_word("in")
        ctx = self.expect_ident("context id")
        self.expect_op("=")
        formula = self.parse_formula()
        end = self.expect_op(";")
        return Interpretation(value.text, ctx.text, formula, _join(start.span, end.span))

    def parse_formula(self) -> Formula:
        items = [self.parse_formula_conj()]
        while self.at_word("or"):
            self.advance()
            items.append(self.parse_formula_conj())
        return items[0] if len(items) == 1 else AnyOf(tuple(items))

    def parse_formula_conj(self) -> Formula:
        items = [self.parse_formula_atom()]
        while self.at_word("and"):
            self.advance()
            items.append(self.parse_formula_atom())
        return items[0] if len(items) == 1 else AllOf(tuple(items))

    def parse_formula_atom(self) -> Formula:
        if self.at_op("("):
            self.advance()
            inner = self.parse_formula()
            self.expect_op(")")
            return inner
        tok = self.expect_ident("norm id")
        return NormLeaf(tok.text, tok.span)

    # -- expressions -----------------------------------------------------

    def parse_expr(self) -> Expr:
        left = self.parse_or()
        if self.at_word("implies"):
            self.advance()
            right = self.parse_expr()
            return Binary("implies", left, right, _join(left.span, right.span))
        return left

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.at_word("or"):
            self.advance()
            right = self.parse_and()
            left = Binary("or", left, right, _join(left.span, right.span))
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.at_word("and"):
            self.advance()
            right = self.parse_not()
            left = Binary("and", left, right, _join(left.span, right.span))
        return left

    def parse_not(self) -> Expr:
        if self.at_word("not"):
            start = self.advance()
            operand = self.parse_not()
            return Unary("not", operand, _join(start.span, operand.span))
        return self.parse_comparison()

    def parse_comparison(self) -> Expr:
        left = self.parse_additive()
        if self.tok.kind == "OP" and self.tok.text in ("==", "!=", "<", "<=", ">", ">="):
            op = self.advance().text
            right = self.parse_additive()
            node = Binary(op, left, right, _join(left.span, right.span))
            if self.tok.kind == "OP" and self.tok.text in ("==", "!=", "<", "<=", ">", ">="):
                self.fail("comparisons do not chain; use parentheses")
            return node
        return left

    def parse_additive(self) -> Expr:
        left = self.parse_multiplicative()
        while self.tok.kind == "OP" and self.tok.text in ("+", "-"):
            op = self.advance().text
            right = self.parse_multiplicative()
            left = Binary(op, left, right, _join(left.span, right.span))
        return left

    def parse_multiplicative(self) -> Expr:
        left = self.parse_unary()
        while self.tok.kind == "OP" and self.tok.text in ("*", "/"):
            op = self.advance().text
            right = self.parse_unary()
            left = Binary(op, left, right, _join(left.span, right.span))
        return left

    def parse_unary(self) -> Expr:
        if self.at_op("-"):
            start = self.advance()
            nxt = self.tok
            if nxt.kind in ("INT", "DECIMAL"):
                self.advance()
                kind = INT if nxt.kind == "INT" else DECIMAL
                return Literal(-nxt.value, kind, _join(start.span, nxt.span))  # type: ignore[operator]
            operand = self.parse_unary()
            return Unary("neg", operand, _join(start.span, operand.span))
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "INT":
            self.advance()
            return Literal(tok.value, INT, tok.span)
        if tok.kind == "DECIMAL":
            self.advance()
            return Literal(tok.value, DECIMAL, tok.span)
        if tok.kind == "STRING":
            self.advance()
            return Literal(tok.value, STRING, tok.span)
        if self.at_op("("):
            self.advance()
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if tok.kind == "IDENT":
            word = tok.text
            if word in ("true", "false"):
                self.advance()
                return Literal(word == "true", BOOL, tok.span)
            if word == "abs":
                self.advance()
                self.expect_op("(")
                inner = self.parse_expr()
                end = self.expect_op(")")
                return Unary("abs", inner, _join(tok.span, end.span))
            if word == "bucket":
                self.advance()
                self.expect_op("(")
                inner = self.parse_expr()
                self.expect_op(",")
                width = self.expect_int("bucket width")
                end = self.expect_op(")")
                return Bucket(inner, width.value, _join(tok.span, end.span))  # type: ignore[arg-type]
            if word in SECTIONS:
                return self.parse_field_ref(None)
            if word in ("a", "b") and self.peek().kind == "OP" and self.peek().text == ".":
                self.advance()
                self.advance()
                return self.parse_field_ref(word, tok)
            self.fail(f"unknown name '{word}' in expression (fields are written in.X, out.X or env.X)")
        self.fail(f"expected an expression, found {self._describe(tok)}")

    def parse_field_ref(self, side: str | None, start: Token | None = None) -> FieldRef:
        section = self.tok
        if section.kind != "IDENT" or section.text not in SECTIONS:
            self.fail(f"expected a section (in, out, env), found {self._describe(section)}")
        self.advance()
        self.expect_op(".")
        name = self.tok
        if name.kind != "IDENT":
            self.fail(f"expected a field name, found {self._describe(name)}")
        self.advance()
        return FieldRef(section.text, name.text, side, _join((start or section).span, name.span))


def parse_spec(text: str) -> GlassBoxSpec:
    """Parse and type check ``.gbx`` source. Raises :class:`SpecError`.

    Structural problems (cycles, unreachable requirements, dangling norms,
    out-of-range parameters) do not fail the parse; run
    :func:`~glassbox.model.validate_hierarchy` for those.
    """
    spec = Parser(text).parse()
    fatal = [d for d in validate_hierarchy(spec) if d.is_error and d.code in PARSE_TIME_CODES]
    if fatal:
        raise SpecError(fatal)
    return spec
