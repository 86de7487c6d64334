"""Glass-Box: check a decision system's interaction trace against an
explicit hierarchy of values, norms and input/output requirements."""

from __future__ import annotations

__version__ = "0.1.0"

from .compliance import (
    Aggregator,
    ComplianceReport,
    CompliancePolicy,
    NormVerdict,
    ValueAdherence,
    aggregate,
    build_report,
    evaluate_value,
    explain,
    render_explanation,
)
from .diagnostics import Diagnostic, SourceSpan, SpecError
from .evaluators import CostClass, CostKind, EvaluationHalt, Monitor, Status, Verdict, cost_class
from .expr import eval_expression
from .model import GlassBoxSpec, UnknownIdError, validate_hierarchy
from .parser import parse_spec
from .serializer import serialize_spec
from .trace import Event, SchemaViolation, Trace, TraceError, field_names_present, read_trace

__all__ = [
    "Aggregator",
    "ComplianceReport",
    "CompliancePolicy",
    "CostClass",
    "CostKind",
    "Diagnostic",
    "EvaluationHalt",
    "Event",
    "GlassBoxSpec",
    "Monitor",
    "NormVerdict",
    "SchemaViolation",
    "SourceSpan",
    "SpecError",
    "Status",
    "Trace",
    "TraceError",
    "UnknownIdError",
    "ValueAdherence",
    "Verdict",
    "aggregate",
    "build_report",
    "cost_class",
    "eval_expression",
    "evaluate_value",
    "explain",
    "field_names_present",
    "parse_spec",
    "read_trace",
    "render_explanation",
    "serialize_spec",
    "validate_hierarchy",
]
