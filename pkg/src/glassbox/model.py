"""The value/norm/requirement hierarchy and its structural queries."""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import ClassVar, Iterator, Union

from .diagnostics import Diagnostic, SourceSpan
from .expr import BOOL, SECTIONS, TYPES, Expr, typecheck

MODALITIES = ("obligation", "prohibition")
WINDOW_UNITS = ("events", "ms", "s", "min", "h", "d")
RESERVED = frozenset(
    "and or not implies true false in out env abs bucket".split()
)


class UnknownIdError(LookupError):
    pass


@dataclass(frozen=True)
class FieldDecl:
    section: str
    name: str
    type: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Value:
    id: str
    description: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Context:
    id: str
    description: str
    guard: Expr | None = None
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Norm:
    id: str
    description: str
    modality: str = "obligation"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class CountsAsEdge:
    """``sources`` (one norm, or a set of norms jointly) count as ``target``
    (a value or a more abstract norm) in ``context``."""

    sources: tuple[str, ...]
    target: str
    context: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ForTheSakeOfEdge:
    source: str
    target: str


# --------------------------------------------------------------------------
# Requirements
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    size: int
    unit: str = "events"

    @property
    def event_based(self) -> bool:
        return self.unit == "events"


@dataclass(frozen=True)
class Requirement:
    kind: ClassVar[str] = ""

    id: str
    for_the_sake_of: tuple[str, ...]
    description: str = ""
    span: SourceSpan | None = field(default=None, compare=False, repr=False, kw_only=True)

    @property
    def window_size(self) -> int | None:
        window = getattr(self, "window", None)
        return window.size if window is not None else None

    def expressions(self) -> Iterator[tuple[str, Expr, bool]]:
        """(clause name, expression, is-pairwise) for every expression clause."""
        return iter(())


@dataclass(frozen=True)
class PerEventRequirement(Requirement):
    kind: ClassVar[str] = "per_event"

    when: Expr | None = None
    then: Expr | None = None

    def expressions(self):
        if self.when is not None:
            yield "when", self.when, False
        if self.then is not None:
            yield "then", self.then, False


@dataclass(frozen=True)
class WindowParityRequirement(Requirement):
    kind: ClassVar[str] = "window_parity"

    window: Window | None = None
    group_by: Expr | None = None
    outcome: Expr | None = None
    max_gap: Fraction | None = None
    min_samples: int = 30

    def expressions(self):
        if self.group_by is not None:
            yield "group_by", self.group_by, False
        if self.outcome is not None:
            yield "outcome", self.outcome, False


@dataclass(frozen=True)
class PairwiseConsistencyRequirement(Requirement):
    kind: ClassVar[str] = "pairwise_consistency"

    window: Window | None = None
    similar: Expr | None = None
    consistent: Expr | None = None

    def expressions(self):
        if self.similar is not None:
            yield "similar", self.similar, True
        if self.consistent is not None:
            yield "consistent", self.consistent, True


@dataclass(frozen=True)
class WindowDriftRequirement(Requirement):
    kind: ClassVar[str] = "window_drift"

    window: Window | None = None
    rate: Expr | None = None
    max_delta: Fraction | None = None

    def expressions(self):
        if self.rate is not None:
            yield "rate", self.rate, False


@dataclass(frozen=True)
class FieldWhitelistRequirement(Requirement):
    kind: ClassVar[str] = "field_whitelist"

    section: str = "in"
    allowed: tuple[str, ...] = ()


REQUIREMENT_KINDS: dict[str, type[Requirement]] = {
    cls.kind: cls
    for cls in (
        PerEventRequirement,
        WindowParityRequirement,
        PairwiseConsistencyRequirement,
        WindowDriftRequirement,
        FieldWhitelistRequirement,
    )
}


# --------------------------------------------------------------------------
# Interpretation formulas
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormLeaf:
    norm: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class AllOf:
    items: tuple["Formula", ...]


@dataclass(frozen=True)
class AnyOf:
    items: tuple["Formula", ...]


Formula = Union[NormLeaf, AllOf, AnyOf]


def formula_leaves(formula: Formula) -> list[str]:
    if isinstance(formula, NormLeaf):
        return [formula.norm]
    out: list[str] = []
    for item in formula.items:
        for leaf in formula_leaves(item):
            if leaf not in out:
                out.append(leaf)
    return out


@dataclass(frozen=True)
class Interpretation:
    value: str
    context: str
    formula: Formula
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


# --------------------------------------------------------------------------
# GlassBoxSpec and hierarchy queries
# --------------------------------------------------------------------------


def _by_id(items) -> list:
    return sorted(items, key=lambda x: x.id)


@dataclass(frozen=True, eq=False)
class GlassBoxSpec:
    """A complete hierarchy. Treat as immutable once built.

    Equality is structural: declaration order and source spans are ignored,
    except where order carries meaning (clause lists inside an element).
    """

    name: str
    fields: tuple[FieldDecl, ...] = ()
    values: tuple[Value, ...] = ()
    contexts: tuple[Context, ...] = ()
    norms: tuple[Norm, ...] = ()
    requirements: tuple[Requirement, ...] = ()
    counts_as: tuple[CountsAsEdge, ...] = ()
    interpretations: tuple[Interpretation, ...] = ()

    def _canonical(self):
        return (
            self.name,
            sorted(self.fields, key=lambda f: (f.section, f.name)),
            _by_id(self.values),
            _by_id(self.contexts),
            _by_id(self.norms),
            sorted(self.requirements, key=lambda r: (r.id, r.kind)),
            sorted(self.counts_as, key=lambda e: (e.sources, e.target, e.context)),
            sorted(self.interpretations, key=lambda i: (i.value, i.context)),
        )

    def __eq__(self, other):
        if not isinstance(other, GlassBoxSpec):
            return NotImplemented
        return self._canonical() == other._canonical()

    __hash__ = None  # type: ignore[assignment]

    # -- lookups ---------------------------------------------------------

    @cached_property
    def schema(self) -> dict[tuple[str, str], str]:
        return {(f.section, f.name): f.type for f in self.fields}

    @cached_property
    def value_map(self) -> dict[str, Value]:
        return {v.id: v for v in self.values}

    @cached_property
    def context_map(self) -> dict[str, Context]:
        return {c.id: c for c in self.contexts}

    @cached_property
    def norm_map(self) -> dict[str, Norm]:
        return {n.id: n for n in self.norms}

    @cached_property
    def requirement_map(self) -> dict[str, Requirement]:
        return {r.id: r for r in self.requirements}

    def requirement(self, rid: str) -> Requirement:
        try:
            return self.requirement_map[rid]
        except KeyError:
            raise UnknownIdError(f"unknown requirement '{rid}'") from None

    def for_the_sake_of_edges(self) -> list[ForTheSakeOfEdge]:
        return [ForTheSakeOfEdge(r.id, n) for r in self.requirements for n in r.for_the_sake_of]

    def interpretation(self, value: str, context: str) -> Interpretation | None:
        for interp in self.interpretations:
            if interp.value == value and interp.context == context:
                return interp
        return None

    @cached_property
    def _counts_as_out(self) -> dict[str, list[tuple[str, str]]]:
        out: dict[str, list[tuple[str, str]]] = {}
        for edge in self.counts_as:
            for src in edge.sources:
                out.setdefault(src, []).append((edge.target, edge.context))
        return out

    @cached_property
    def _counts_as_in(self) -> dict[str, list[tuple[str, str]]]:
        into: dict[str, list[tuple[str, str]]] = {}
        for edge in self.counts_as:
            for src in edge.sources:
                into.setdefault(edge.target, []).append((src, edge.context))
        return into

    @cached_property
    def _served_by(self) -> dict[str, list[str]]:
        served: dict[str, list[str]] = {}
        for r in self.requirements:
            for n in r.for_the_sake_of:
                served.setdefault(n, []).append(r.id)
        return served

    def requirements_for_norm(self, norm_id: str) -> list[str]:
        """Requirements with a for-the-sake-of edge to ``norm_id``, by id."""
        return sorted(set(self._served_by.get(norm_id, [])))

    def _check_ids(self, **ids: str) -> None:
        maps = {
            "requirement": self.requirement_map,
            "value": self.value_map,
            "context": self.context_map,
            "norm": self.norm_map,
        }
        for kind, ident in ids.items():
            if ident not in maps[kind]:
                raise UnknownIdError(f"unknown {kind} '{ident}'")

    # -- traversal -------------------------------------------------------

    def values_of_requirement(self, requirement_id: str, context_id: str) -> set[str]:
        """Values reached from a requirement by one for-the-sake-of edge and
        then counts-as edges labelled ``context_id``."""
        self._check_ids(requirement=requirement_id, context=context_id)
        found: set[str] = set()
        seen: set[str] = set()
        stack = list(self.requirement_map[requirement_id].for_the_sake_of)
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            for target, ctx in self._counts_as_out.get(node, ()):
                if ctx != context_id:
                    continue
                if target in self.value_map:
                    found.add(target)
                else:
                    stack.append(target)
        return found

    def norms_of_value(self, value_id: str, context_id: str) -> list[str]:
        """Norms linked to the value by a counts-as path active in the context."""
        self._check_ids(value=value_id, context=context_id)
        seen: set[str] = set()
        stack = [value_id]
        while stack:
            node = stack.pop()
            for src, ctx in self._counts_as_in.get(node, ()):
                if ctx == context_id and src not in seen and src in self.norm_map:
                    seen.add(src)
                    stack.append(src)
        return sorted(seen)

    def requirements_of_value(self, value_id: str, context_id: str) -> set[str]:
        return {
            rid
            for norm in self.norms_of_value(value_id, context_id)
            for rid in self._served_by.get(norm, ())
        }

    def counts_as_path(self, norm_id: str, value_id: str, context_id: str) -> list[str]:
        """One shortest norm chain from ``norm_id`` up to ``value_id``."""
        prev: dict[str, str | None] = {norm_id: None}
        frontier = [norm_id]
        while frontier:
            nxt = []
            for node in frontier:
                for target, ctx in self._counts_as_out.get(node, ()):
                    if ctx != context_id or target in prev:
                        continue
                    prev[target] = node
                    if target == value_id:
                        path = [target]
                        cur: str | None = node
                        while cur is not None:
                            path.append(cur)
                            cur = prev[cur]
                        return path[::-1]
                    nxt.append(target)
            frontier = nxt
        return []

    def value_context_pairs(self) -> list[tuple[str, str]]:
        """(value, context) pairs with at least one active norm or an explicit
        interpretation, in declaration order."""
        pairs = []
        explicit = {(i.value, i.context) for i in self.interpretations}
        for v in self.values:
            for c in self.contexts:
                if (v.id, c.id) in explicit or self.norms_of_value(v.id, c.id):
                    pairs.append((v.id, c.id))
        return pairs

    def formula_for(self, value_id: str, context_id: str) -> Formula | None:
        """The interpretation of a value in a context: the declared formula,
        or the conjunction of all active norms. ``None`` when no norm applies."""
        interp = self.interpretation(value_id, context_id)
        if interp is not None:
            return interp.formula
        norms = self.norms_of_value(value_id, context_id)
        if not norms:
            return None
        return AllOf(tuple(NormLeaf(n) for n in norms))


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def _rational_in_unit(x: Fraction | None) -> bool:
    return x is not None and 0 <= x <= 1


def validate_hierarchy(spec: GlassBoxSpec) -> list[Diagnostic]:
    """Check every structural invariant of ``spec``. Errors and warnings are
    returned, never raised."""
    diags: list[Diagnostic] = []

    def error(code: str, msg: str, *ids: str, span=None) -> None:
        diags.append(Diagnostic("error", code, msg, tuple(ids), span))

    def warn(code: str, msg: str, *ids: str, span=None) -> None:
        diags.append(Diagnostic("warning", code, msg, tuple(ids), span))

    # ids ----------------------------------------------------------------
    seen: dict[str, str] = {}
    for kind, items in (
        ("value", spec.values),
        ("context", spec.contexts),
        ("norm", spec.norms),
        ("requirement", spec.requirements),
    ):
        for item in items:
            if item.id in RESERVED:
                error("reserved-id", f"'{item.id}' is a reserved word", item.id, span=item.span)
            if item.id in seen:
                error("duplicate-id", f"{kind} '{item.id}' reuses the id of a {seen[item.id]}", item.id, span=item.span)
            else:
                seen[item.id] = kind

    field_seen: set[tuple[str, str]] = set()
    for f in spec.fields:
        if f.section not in SECTIONS:
            error("schema", f"unknown section '{f.section}'", span=f.span)
        if f.type not in TYPES:
            error("schema", f"unknown type '{f.type}' for {f.section}.{f.name}", span=f.span)
        if (f.section, f.name) in field_seen:
            error("duplicate-field", f"field {f.section}.{f.name} declared twice", span=f.span)
        field_seen.add((f.section, f.name))

    for v in spec.values:
        if not v.description.strip():
            error("empty-description", f"value '{v.id}' needs a description", v.id, span=v.span)

    for n in spec.norms:
        if n.modality not in MODALITIES:
            error("modality", f"norm '{n.id}' has unknown modality '{n.modality}'", n.id, span=n.span)

    for c in spec.contexts:
        if c.guard is not None:
            t = typecheck(c.guard, spec.schema, diags, owner=c.id)
            if t is not None and t != BOOL:
                error("type", f"guard of context '{c.id}' must be bool, got {t}", c.id, span=c.span)

    # edges --------------------------------------------------------------
    for edge in spec.counts_as:
        for src in edge.sources:
            if src not in spec.norm_map:
                error("unknown-reference", f"counts_as source '{src}' is not a norm", src, span=edge.span)
        if edge.target not in spec.norm_map and edge.target not in spec.value_map:
            error("unknown-reference", f"counts_as target '{edge.target}' is neither a value nor a norm", edge.target, span=edge.span)
        if edge.context not in spec.context_map:
            error("unknown-reference", f"unknown context '{edge.context}'", edge.context, span=edge.span)

    for r in spec.requirements:
        for target in r.for_the_sake_of:
            if target not in spec.norm_map:
                error("unknown-reference", f"requirement '{r.id}' is for the sake of unknown norm '{target}'", r.id, span=r.span)
        _validate_requirement(spec, r, diags)

    # acyclicity over both edge types --------------------------------------
    graph: dict[str, set[str]] = {}
    for edge in spec.counts_as:
        for src in edge.sources:
            graph.setdefault(src, set()).add(edge.target)
    for e in spec.for_the_sake_of_edges():
        graph.setdefault(e.source, set()).add(e.target)
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
        acyclic = True
    except graphlib.CycleError as exc:
        acyclic = False
        cycle = exc.args[1]
        members = sorted(set(cycle))
        error("cycle", "counts-as cycle through " + " -> ".join(reversed(cycle)), *members)

    # reachability -------------------------------------------------------
    if acyclic:
        for r in spec.requirements:
            reached = any(
                spec.values_of_requirement(r.id, c.id)
                for c in spec.contexts
                if all(t in spec.norm_map for t in r.for_the_sake_of)
            )
            if not r.for_the_sake_of:
                error("unreachable-requirement", f"unreachable requirement '{r.id}': it has no for_the_sake_of edge", r.id, span=r.span)
            elif not reached:
                error("unreachable-requirement", f"unreachable requirement '{r.id}': no value is reached through its norms", r.id, span=r.span)
            else:
                contexts = sorted(c.id for c in spec.contexts if spec.values_of_requirement(r.id, c.id))
                if len(contexts) > 1:
                    warn("multi-context", f"requirement '{r.id}' serves values in several contexts: {', '.join(contexts)}", r.id, span=r.span)

    sources = {s for e in spec.counts_as for s in e.sources}
    served = {t for r in spec.requirements for t in r.for_the_sake_of}
    for n in spec.norms:
        if n.id not in sources:
            warn("dangling-norm", f"norm '{n.id}' does not count as any value or norm", n.id, span=n.span)
        if n.id not in served:
            warn("dangling-norm", f"no requirement is for the sake of norm '{n.id}'", n.id, span=n.span)

    # interpretations ----------------------------------------------------
    pairs: set[tuple[str, str]] = set()
    for interp in spec.interpretations:
        key = (interp.value, interp.context)
        ok = True
        if interp.value not in spec.value_map:
            error("unknown-reference", f"interpretation of unknown value '{interp.value}'", interp.value, span=interp.span)
            ok = False
        if interp.context not in spec.context_map:
            error("unknown-reference", f"interpretation in unknown context '{interp.context}'", interp.context, span=interp.span)
            ok = False
        if key in pairs:
            error("duplicate-interpretation", f"second interpretation of {interp.value} in {interp.context}", interp.value, interp.context, span=interp.span)
        pairs.add(key)
        if not ok or not acyclic:
            continue
        active = set(spec.norms_of_value(interp.value, interp.context))
        for leaf in formula_leaves(interp.formula):
            if leaf not in spec.norm_map:
                error("unknown-reference", f"formula leaf '{leaf}' is not a norm", leaf, span=interp.span)
            elif leaf not in active:
                error("inactive-norm", f"norm '{leaf}' does not count as '{interp.value}' in context '{interp.context}'", leaf, span=interp.span)

    order = {"error": 0, "warning": 1}
    diags.sort(key=lambda d: (order[d.severity], d.span.start if d.span else -1, d.code, d.elements))
    return diags


def _validate_requirement(spec: GlassBoxSpec, r: Requirement, diags: list[Diagnostic]) -> None:
    def error(msg: str, code: str = "requirement") -> None:
        diags.append(Diagnostic("error", code, msg, (r.id,), r.span))

    required: dict[str, tuple[str, ...]] = {
        "per_event": ("then",),
        "window_parity": ("window", "group_by", "outcome", "max_gap"),
        "pairwise_consistency": ("window", "similar", "consistent"),
        "window_drift": ("window", "rate", "max_delta"),
        "field_whitelist": (),
    }
    for clause in required.get(r.kind, ()):
        if getattr(r, clause) is None:
            error(f"{r.kind} requirement '{r.id}' is missing its '{clause}' clause", "missing-clause")

    for clause, expr, pairwise in r.expressions():
        t = typecheck(expr, spec.schema, diags, pairwise=pairwise, owner=r.id)
        if clause != "group_by" and t is not None and t != BOOL:
            error(f"'{clause}' of '{r.id}' must be bool, got {t}", "type")

    window = getattr(r, "window", None)
    if window is not None:
        if window.size < 1:
            error(f"window of '{r.id}' must hold at least one event")
        if window.unit not in WINDOW_UNITS:
            error(f"unknown window unit '{window.unit}'")
        elif not window.event_based:
            error(f"time-based window on '{r.id}' is unsupported in v1", "unsupported")

    if isinstance(r, WindowParityRequirement):
        if r.max_gap is not None and not _rational_in_unit(r.max_gap):
            error(f"max_gap of '{r.id}' must lie in [0, 1]")
        if r.min_samples < 1:
            error(f"min_samples of '{r.id}' must be at least 1")
    if isinstance(r, WindowDriftRequirement):
        if r.max_delta is not None and not _rational_in_unit(r.max_delta):
            error(f"max_delta of '{r.id}' must lie in [0, 1]")
    if isinstance(r, FieldWhitelistRequirement):
        if r.section not in SECTIONS:
            error(f"unknown section '{r.section}'")
        if not r.allowed:
            error(f"whitelist of '{r.id}' is empty")
        for name in r.allowed:
            if (r.section, name) not in spec.schema:
                diags.append(Diagnostic("warning", "unknown-field", f"whitelisted field {r.section}.{name} is not in the schema", (r.id,), r.span))
