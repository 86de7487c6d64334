"""Canonical text form of a spec."""

from __future__ import annotations

from fractions import Fraction

from .expr import format_expression
from .model import (
    AllOf,
    AnyOf,
    FieldWhitelistRequirement,
    Formula,
    GlassBoxSpec,
    NormLeaf,
    PairwiseConsistencyRequirement,
    PerEventRequirement,
    Requirement,
    Window,
    WindowDriftRequirement,
    WindowParityRequirement,
)

INDENT = "  "


def _string(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _desc(s: str) -> str:
    return f" {_string(s)}" if s else ""


def _rational(x: Fraction) -> str:
    return str(x)


def _window(w: Window) -> str:
    return str(w.size) if w.event_based else f"{w.size} {w.unit}"


def format_formula(f: Formula) -> str:
    if isinstance(f, NormLeaf):
        return f.norm
    if isinstance(f, AllOf):
        # nested conjunctions and any disjunction keep their parentheses
        return " and ".join(
            f"({format_formula(x)})" if isinstance(x, (AllOf, AnyOf)) else format_formula(x)
            for x in f.items
        )
    return " or ".join(
        f"({format_formula(x)})" if isinstance(x, AnyOf) else format_formula(x)
        for x in f.items
    )


def _requirement_clauses(r: Requirement) -> list[str]:
    lines = [f"kind {r.kind};"]
    lines += [f"for_the_sake_of {n};" for n in r.for_the_sake_of]
    if isinstance(r, PerEventRequirement):
        if r.when is not None:
            lines.append(f"when {format_expression(r.when)};")
        if r.then is not None:
            lines.append(f"then {format_expression(r.then)};")
    elif isinstance(r, WindowParityRequirement):
        if r.window is not None:
            lines.append(f"window {_window(r.window)};")
        if r.group_by is not None:
            lines.append(f"group_by {format_expression(r.group_by)};")
        if r.outcome is not None:
            lines.append(f"outcome {format_expression(r.outcome)};")
        if r.max_gap is not None:
            lines.append(f"max_gap {_rational(r.max_gap)};")
        lines.append(f"min_samples {r.min_samples};")
    elif isinstance(r, PairwiseConsistencyRequirement):
        if r.window is not None:
            lines.append(f"window {_window(r.window)};")
        if r.similar is not None:
            lines.append(f"similar {format_expression(r.similar)};")
        if r.consistent is not None:
            lines.append(f"consistent {format_expression(r.consistent)};")
    elif isinstance(r, WindowDriftRequirement):
        if r.window is not None:
            lines.append(f"window {_window(r.window)};")
        if r.rate is not None:
            lines.append(f"rate {format_expression(r.rate)};")
        if r.max_delta is not None:
            lines.append(f"max_delta {_rational(r.max_delta)};")
    elif isinstance(r, FieldWhitelistRequirement):
        lines.append(f"section {r.section};")
        if r.allowed:
            lines.append(f"allow {', '.join(r.allowed)};")
    return lines


def serialize_spec(spec: GlassBoxSpec) -> str:
    """Render ``spec`` canonically. Declaration order is kept; single-source
    counts-as edges are written inside their norm, joint edges after all norms."""
    out = [f"glassbox {spec.name} {{"]
    sections: list[list[str]] = []

    if spec.fields:
        block = [f"{INDENT}schema {{"]
        block += [f"{INDENT * 2}{f.section} {f.name}: {f.type};" for f in spec.fields]
        block.append(f"{INDENT}}}")
        sections.append(block)
    if spec.values:
        sections.append([f"{INDENT}value {v.id}{_desc(v.description)};" for v in spec.values])
    if spec.contexts:
        block = []
        for c in spec.contexts:
            guard = f" when {format_expression(c.guard)}" if c.guard is not None else ""
            block.append(f"{INDENT}context {c.id}{_desc(c.description)}{guard};")
        sections.append(block)
    for n in spec.norms:
        edges = [e for e in spec.counts_as if e.sources == (n.id,)]
        head = f"{INDENT}norm {n.id} {n.modality}{_desc(n.description)} {{"
        if not edges:
            sections.append([head + "}"])
            continue
        block = [head]
        block += [f"{INDENT * 2}counts_as {e.target} in {e.context};" for e in edges]
        block.append(f"{INDENT}}}")
        sections.append(block)
    norm_ids = {n.id for n in spec.norms}
    joint = [
        e for e in spec.counts_as
        if len(e.sources) != 1 or e.sources[0] not in norm_ids
    ]
    if joint:
        sections.append([
            f"{INDENT}joint {{ {', '.join(e.sources)} }} counts_as {e.target} in {e.context};"
            for e in joint
        ])
    for r in spec.requirements:
        block = [f"{INDENT}requirement {r.id}{_desc(r.description)} {{"]
        block += [f"{INDENT * 2}{line}" for line in _requirement_clauses(r)]
        block.append(f"{INDENT}}}")
        sections.append(block)
    if spec.interpretations:
        sections.append([
            f"{INDENT}interpretation {i.value} in {i.context} = {format_formula(i.formula)};"
            for i in spec.interpretations
        ])

    for k, block in enumerate(sections):
        if k:
            out.append("")
        out.extend(block)
    out.append("}")
    return "\n".join(out) + "\n"
