"""From verdicts to norm compliance, value adherence and explanations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping

from .evaluators import INAPPLICABLE, SATISFIED, VIOLATED, Verdict, cost_class
from .model import AllOf, Formula, GlassBoxSpec, NormLeaf, UnknownIdError, formula_leaves
from .serializer import format_formula

DEFAULT_SAMPLES = 10
WINDOWED_KINDS = frozenset(("window_parity", "pairwise_consistency", "window_drift"))


@dataclass(frozen=True)
class CompliancePolicy:
    """``strict``: a norm complies only with zero violations. ``ratio``: it
    complies while violated / (violated + satisfied) <= theta."""

    mode: str = "strict"
    theta: Fraction | None = None

    def __post_init__(self) -> None:
        if self.mode == "strict":
            if self.theta is not None:
                raise ValueError("strict policy takes no theta")
        elif self.mode == "ratio":
            if self.theta is None:
                raise ValueError("ratio policy needs theta")
            if not 0 <= self.theta <= 1:
                raise ValueError("theta must lie in [0, 1]")
            object.__setattr__(self, "theta", Fraction(self.theta))
        else:
            raise ValueError(f"unknown policy mode {self.mode!r}")

    def complies(self, violated: int, satisfied: int) -> bool:
        if self.mode == "strict":
            return violated == 0
        decided = violated + satisfied
        if decided == 0:
            return True
        return violated * self.theta.denominator <= self.theta.numerator * decided

    def to_record(self) -> dict:
        if self.mode == "strict":
            return {"mode": "strict"}
        return {"mode": "ratio", "theta": str(self.theta)}


# --------------------------------------------------------------------------
# Per-requirement tallies
# --------------------------------------------------------------------------


@dataclass
class Tally:
    requirement: str
    kind: str
    samples: int = DEFAULT_SAMPLES
    satisfied: int = 0
    violated: int = 0
    inapplicable: int = 0
    pending: int = 0
    violating: list[tuple[int, str]] = field(default_factory=list)
    satisfying: list[tuple[int, str]] = field(default_factory=list)

    def add(self, v: Verdict) -> None:
        s = v.status
        if s is SATISFIED:
            self.satisfied += 1
            if len(self.satisfying) < self.samples:
                self.satisfying.append((v.pos, v.event))
        elif s is VIOLATED:
            self.violated += 1
            if len(self.violating) < self.samples:
                self.violating.append((v.pos, v.event))
        elif s is INAPPLICABLE:
            self.inapplicable += 1
        else:
            self.pending += 1

    @property
    def evaluations(self) -> int:
        return self.satisfied + self.violated + self.inapplicable + self.pending

    @property
    def state(self) -> str:
        if self.violated:
            return "violated"
        if self.satisfied:
            return "satisfied"
        if self.kind in WINDOWED_KINDS:
            return "pending"
        return "inapplicable"

    def counts(self) -> dict[str, int]:
        return {
            "Satisfied": self.satisfied,
            "Violated": self.violated,
            "Inapplicable": self.inapplicable,
            "Pending": self.pending,
        }


class Aggregator:
    """Consumes a verdict stream in position order."""

    def __init__(self, spec: GlassBoxSpec, samples: int = DEFAULT_SAMPLES):
        self.spec = spec
        self.tallies = {
            r.id: Tally(r.id, r.kind, samples) for r in sorted(spec.requirements, key=lambda r: r.id)
        }
        self.samples = samples

    def add(self, verdict: Verdict) -> None:
        try:
            tally = self.tallies[verdict.req]
        except KeyError:
            raise UnknownIdError(f"verdict for unknown requirement '{verdict.req}'") from None
        tally.add(verdict)

    def extend(self, verdicts: Iterable[Verdict]) -> "Aggregator":
        for v in verdicts:
            self.add(v)
        return self


@dataclass(frozen=True)
class NormVerdict:
    norm: str
    compliant: bool
    requirements: dict[str, dict[str, int]]
    satisfied: int
    violated: int
    violating_events: tuple[str, ...]
    vacuous: bool

    @property
    def ratio(self) -> Fraction | None:
        decided = self.satisfied + self.violated
        return Fraction(self.violated, decided) if decided else None

    def to_record(self) -> dict:
        ratio = self.ratio
        return {
            "norm": self.norm,
            "compliant": self.compliant,
            "vacuous": self.vacuous,
            "satisfied": self.satisfied,
            "violated": self.violated,
            "violation_ratio": None if ratio is None else str(ratio),
            "violations": self.violated,
            "violating_events": list(self.violating_events),
            "requirements": self.requirements,
        }


def norm_verdicts(aggregator: Aggregator, policy: CompliancePolicy) -> dict[str, NormVerdict]:
    spec = aggregator.spec
    out = {}
    for norm in spec.norms:
        rids = spec.requirements_for_norm(norm.id)
        tallies = [aggregator.tallies[r] for r in rids]
        sat = sum(t.satisfied for t in tallies)
        vio = sum(t.violated for t in tallies)
        samples = sorted({x for t in tallies for x in t.violating})
        seen: list[str] = []
        for _, eid in samples:
            if eid not in seen:
                seen.append(eid)
        out[norm.id] = NormVerdict(
            norm=norm.id,
            compliant=policy.complies(vio, sat),
            requirements={t.requirement: t.counts() for t in tallies},
            satisfied=sat,
            violated=vio,
            violating_events=tuple(seen[: aggregator.samples]),
            vacuous=sat + vio == 0,
        )
    return out


def aggregate(spec: GlassBoxSpec, verdicts: Iterable[Verdict], policy: CompliancePolicy, samples: int = DEFAULT_SAMPLES) -> dict[str, NormVerdict]:
    """Norm verdicts for a complete verdict stream."""
    return norm_verdicts(Aggregator(spec, samples).extend(verdicts), policy)


# --------------------------------------------------------------------------
# Values
# --------------------------------------------------------------------------


def eval_formula(formula: Formula, compliant: Mapping[str, bool]) -> tuple[bool, dict]:
    """Evaluate ``formula`` over norm compliance; returns (holds, trace)."""
    if isinstance(formula, NormLeaf):
        try:
            holds = compliant[formula.norm]
        except KeyError:
            raise UnknownIdError(f"no verdict for norm '{formula.norm}'") from None
        return holds, {"norm": formula.norm, "holds": holds}
    parts = [eval_formula(item, compliant) for item in formula.items]
    if isinstance(formula, AllOf):
        holds, op = all(p[0] for p in parts), "and"
    else:
        holds, op = any(p[0] for p in parts), "or"
    return holds, {"op": op, "holds": holds, "items": [p[1] for p in parts]}


@dataclass(frozen=True)
class ValueAdherence:
    value: str
    context: str
    adheres: bool
    vacuous: bool
    formula: str | None
    trace: dict | None

    def to_record(self) -> dict:
        return {
            "value": self.value,
            "context": self.context,
            "adheres": self.adheres,
            "vacuous": self.vacuous,
            "formula": self.formula,
            "evaluation": self.trace,
        }


def evaluate_value(spec: GlassBoxSpec, verdicts: Mapping[str, NormVerdict], value_id: str, context_id: str) -> ValueAdherence:
    if value_id not in spec.value_map:
        raise UnknownIdError(f"unknown value '{value_id}'")
    if context_id not in spec.context_map:
        raise UnknownIdError(f"unknown context '{context_id}'")
    formula = spec.formula_for(value_id, context_id)
    if formula is None:
        return ValueAdherence(value_id, context_id, True, True, None, None)
    compliant = {n: v.compliant for n, v in verdicts.items()}
    holds, trace = eval_formula(formula, compliant)
    vacuous = all(verdicts[n].vacuous for n in formula_leaves(formula))
    return ValueAdherence(value_id, context_id, holds, vacuous, format_formula(formula), trace)


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------


@dataclass
class ComplianceReport:
    spec: GlassBoxSpec
    spec_sha256: str
    trace_source: str
    trace_events: int
    trace_sha256: str
    policy: CompliancePolicy
    tallies: dict[str, Tally]
    norms: dict[str, NormVerdict]
    values: list[ValueAdherence]
    version: str
    schema_warnings: int = 0
    evaluation_warnings: dict[str, int] = field(default_factory=dict)
    context_activity: dict[str, int | None] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    samples: int = DEFAULT_SAMPLES

    @property
    def adheres(self) -> bool:
        return all(v.adheres for v in self.values)

    def value(self, value_id: str, context_id: str) -> ValueAdherence:
        for v in self.values:
            if v.value == value_id and v.context == context_id:
                return v
        return evaluate_value(self.spec, self.norms, value_id, context_id)

    def to_record(self) -> dict:
        spec = self.spec
        requirements = []
        for r in sorted(spec.requirements, key=lambda r: r.id):
            t = self.tallies[r.id]
            cc = cost_class(r)
            requirements.append({
                "id": r.id,
                "kind": r.kind,
                "for_the_sake_of": list(r.for_the_sake_of),
                "cost_class": cc.kind.value,
                "cost_bound": cc.bound,
                "counts": t.counts(),
                "state": t.state,
                "violations": t.violated,
                "violating_events": [e for _, e in t.violating],
                "satisfying_events": [e for _, e in t.satisfying],
                "evaluation_warnings": self.evaluation_warnings.get(r.id, 0),
            })
        norms = []
        for n in spec.norms:
            rec = self.norms[n.id].to_record()
            rec["modality"] = n.modality
            norms.append(rec)
        return {
            "tool": "glassbox",
            "version": self.version,
            "spec": {
                "name": spec.name,
                "sha256": self.spec_sha256,
                "values": [v.id for v in spec.values],
                "contexts": [c.id for c in spec.contexts],
            },
            "trace": {
                "source": self.trace_source,
                "events": self.trace_events,
                "sha256": self.trace_sha256,
                "schema_warnings": self.schema_warnings,
            },
            "policy": self.policy.to_record(),
            "adheres": self.adheres,
            "contexts": [
                {"id": c.id, "active_events": self.context_activity.get(c.id)} for c in spec.contexts
            ],
            "requirements": requirements,
            "norms": norms,
            "values": [v.to_record() for v in self.values],
            "explanations": [explain(spec, self, v.value, v.context) for v in self.values],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def build_report(
    spec: GlassBoxSpec,
    aggregator: Aggregator,
    policy: CompliancePolicy,
    *,
    version: str,
    spec_sha256: str = "",
    trace_source: str = "",
    trace_events: int = 0,
    trace_sha256: str = "",
    **extra: Any,
) -> ComplianceReport:
    norms = norm_verdicts(aggregator, policy)
    values = [evaluate_value(spec, norms, v, c) for v, c in spec.value_context_pairs()]
    return ComplianceReport(
        spec=spec,
        spec_sha256=spec_sha256,
        trace_source=trace_source,
        trace_events=trace_events,
        trace_sha256=trace_sha256,
        policy=policy,
        tallies=aggregator.tallies,
        norms=norms,
        values=values,
        version=version,
        samples=aggregator.samples,
        **extra,
    )


# --------------------------------------------------------------------------
# Explanations
# --------------------------------------------------------------------------


def explain(spec: GlassBoxSpec, report: ComplianceReport, value_id: str, context_id: str, samples: int | None = None) -> dict:
    """Explanation tree for one (value, context): formula nodes, then norms,
    then the requirements serving each norm with sample event ids."""
    k = report.samples if samples is None else samples
    adherence = report.value(value_id, context_id)
    formula = spec.formula_for(value_id, context_id)

    def requirement_node(rid: str) -> dict:
        t = report.tallies[rid]
        return {
            "requirement": rid,
            "kind": t.kind,
            "description": spec.requirement(rid).description,
            "state": t.state,
            "counts": t.counts(),
            "violations": t.violated,
            "violating_events": [e for _, e in t.violating[:k]],
            "satisfying_events": [e for _, e in t.satisfying[:k]],
        }

    def norm_node(norm_id: str) -> dict:
        nv = report.norms[norm_id]
        norm = spec.norm_map[norm_id]
        ratio = nv.ratio
        return {
            "norm": norm_id,
            "modality": norm.modality,
            "description": norm.description,
            "compliant": nv.compliant,
            "vacuous": nv.vacuous,
            "violation_ratio": None if ratio is None else str(ratio),
            "path": spec.counts_as_path(norm_id, value_id, context_id),
            "requirements": [requirement_node(r) for r in spec.requirements_for_norm(norm_id)],
        }

    def node(f: Formula) -> dict:
        if isinstance(f, NormLeaf):
            return norm_node(f.norm)
        items = [node(x) for x in f.items]
        op = "and" if isinstance(f, AllOf) else "or"
        holds = (all if op == "and" else any)(_holds(i) for i in items)
        return {"op": op, "holds": holds, "items": items}

    return {
        "value": value_id,
        "context": context_id,
        "adheres": adherence.adheres,
        "vacuous": adherence.vacuous,
        "formula": None if formula is None else format_formula(formula),
        "tree": None if formula is None else node(formula),
    }


def _holds(n: dict) -> bool:
    return n["compliant"] if "norm" in n else n["holds"]


def render_explanation(tree: dict) -> str:
    """Plain-text rendering of an explanation tree (as found in a report)."""
    head = "ADHERES" if tree["adheres"] else "DOES NOT ADHERE"
    if tree["vacuous"]:
        head += " (vacuously)"
    lines = [f"{tree['value']} in context {tree['context']}: {head}"]
    if tree.get("formula"):
        lines.append(f"  interpretation: {tree['formula']}")
    if tree.get("tree") is None:
        lines.append("  no norm counts as this value in this context: vacuously adheres")
        return "\n".join(lines) + "\n"

    def walk(n: dict, indent: str) -> None:
        if "op" in n:
            lines.append(f"{indent}{n['op'].upper()}: {'holds' if n['holds'] else 'fails'}")
            for item in n["items"]:
                walk(item, indent + "  ")
            return
        status = "compliant" if n["compliant"] else "NOT compliant"
        if n["vacuous"]:
            status += " (no decided evaluations)"
        ratio = n["violation_ratio"]
        ratio_text = f", violation ratio {ratio}" if ratio is not None else ""
        lines.append(f"{indent}norm {n['norm']} [{n['modality']}]: {status}{ratio_text}")
        if n.get("description"):
            lines.append(f"{indent}  {n['description']}")
        if len(n.get("path", ())) > 2:
            lines.append(f"{indent}  counts as via: {' -> '.join(n['path'])}")
        for r in n["requirements"]:
            c = r["counts"]
            lines.append(
                f"{indent}  requirement {r['requirement']} ({r['kind']}): {r['state']}; "
                f"satisfied {c['Satisfied']}, violated {c['Violated']}, "
                f"inapplicable {c['Inapplicable']}, pending {c['Pending']}"
            )
            if r["violating_events"]:
                more = r["violations"] - len(r["violating_events"])
                suffix = f" (+{more} more)" if more > 0 else ""
                lines.append(f"{indent}    violating events: {', '.join(r['violating_events'])}{suffix}")
            else:
                lines.append(f"{indent}    0 violations")

    walk(tree["tree"], "  ")
    return "\n".join(lines) + "\n"


def render_report(record: dict) -> str:
    """Plain-text summary of a serialized report."""
    policy = record["policy"]
    policy_text = policy["mode"] + (f" (theta {policy['theta']})" if "theta" in policy else "")
    trace = record["trace"]
    lines = [
        f"glassbox {record['version']}: spec {record['spec']['name']} on {trace['source']} "
        f"({trace['events']} events), policy {policy_text}",
    ]
    for w in record.get("warnings", ()):
        lines.append(f"warning: {w}")
    lines.append("")
    for v in record["values"]:
        mark = "adheres" if v["adheres"] else "DOES NOT ADHERE"
        if v["vacuous"]:
            mark += " (vacuous)"
        lines.append(f"{v['value']} in {v['context']}: {mark}")
    lines.append("")
    for tree in record["explanations"]:
        lines.append(render_explanation(tree))
    return "\n".join(lines).rstrip("\n") + "\n"
