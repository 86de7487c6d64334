"""``glassbox`` command line.

Exit codes: 0 success (for ``check``: every value adheres in every
context), 1 usage error or invalid spec, 2 unreadable or malformed input,
3 some value does not adhere.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import IO, Sequence

from . import __version__
from .compliance import (
    Aggregator,
    ComplianceReport,
    CompliancePolicy,
    build_report,
    render_explanation,
    render_report,
)
from .diagnostics import SpecError
from .evaluators import EvaluationHalt, Monitor, largest_window, total_cost
from .expr import EvaluationFault, compile_expression
from .generator import ConfigError, GeneratorConfig, simulate
from .model import GlassBoxSpec, UnknownIdError, validate_hierarchy
from .parser import parse_spec
from .serializer import serialize_spec
from .trace import LENIENT, STRICT, Trace, TraceError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NONADHERENT = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_spec(path: str) -> tuple[str, bytes]:
    data = Path(path).read_bytes()
    return data.decode("utf-8"), data


def load_spec(path: str, err: IO[str]) -> tuple[GlassBoxSpec, str] | int:
    """Parse and validate a spec file; on failure print diagnostics and
    return an exit code."""
    try:
        text, data = _read_spec(path)
    except FileNotFoundError:
        print(f"{path}: no such file", file=err)
        return EXIT_INPUT
    except (OSError, UnicodeDecodeError) as exc:
        print(f"{path}: cannot read: {exc}", file=err)
        return EXIT_INPUT
    try:
        spec = parse_spec(text)
    except SpecError as exc:
        for d in exc.diagnostics:
            print(d.format(path), file=err)
        return EXIT_USAGE
    diags = validate_hierarchy(spec)
    for d in diags:
        print(d.format(path), file=err)
    if any(d.is_error for d in diags):
        return EXIT_USAGE
    return spec, hashlib.sha256(data).hexdigest()


def _count_context_activity(spec: GlassBoxSpec):
    """Returns (per-event hook, counts) for contexts that carry a guard."""
    guards = [(c.id, compile_expression(c.guard)) for c in spec.contexts if c.guard is not None]
    counts: dict[str, int | None] = {c.id: None for c in spec.contexts}
    for cid, _ in guards:
        counts[cid] = 0

    def observe(events):
        for event in events:
            for cid, guard in guards:
                try:
                    if guard(event, None):
                        counts[cid] += 1
                except EvaluationFault:
                    pass
            yield event

    return (observe if guards else None), counts


def run_check(
    spec: GlassBoxSpec,
    trace_source,
    *,
    policy: CompliancePolicy,
    spec_sha256: str = "",
    strict: bool = False,
    jobs: int = 1,
    verdicts_out: IO[str] | None = None,
    warnings: Sequence[str] = (),
) -> ComplianceReport:
    """Stream a trace through every requirement of ``spec`` and aggregate.

    Raises :class:`TraceError` or :class:`EvaluationHalt` on bad input.
    """
    trace = Trace(
        trace_source,
        spec.schema,
        STRICT if strict else LENIENT,
        id_horizon=max(largest_window(spec), 4096),
    )
    events = iter(trace)
    observe, activity = _count_context_activity(spec)
    if observe is not None:
        events = observe(events)
    monitor = Monitor(spec, strict=strict, jobs=jobs)
    aggregator = Aggregator(spec)
    add = aggregator.add
    if verdicts_out is None:
        for v in monitor.run(events):
            add(v)
    else:
        dumps = json.dumps
        write = verdicts_out.write
        for v in monitor.run(events):
            add(v)
            write(dumps(v.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n")
    return build_report(
        spec,
        aggregator,
        policy,
        version=__version__,
        spec_sha256=spec_sha256,
        trace_source=trace.descriptor,
        trace_events=trace.count,
        trace_sha256=trace.sha256,
        schema_warnings=trace.warning_count,
        evaluation_warnings=monitor.warnings,
        context_activity=activity,
        warnings=list(warnings),
    )


def _policy(args) -> CompliancePolicy:
    if args.policy == "strict":
        if args.theta is not None:
            raise UsageError("--theta only applies to --policy ratio")
        return CompliancePolicy("strict")
    if args.theta is None:
        raise UsageError("--policy ratio needs --theta")
    try:
        theta = Fraction(args.theta)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"--theta: not a number: {args.theta!r}") from None
    if not 0 <= theta <= 1:
        raise UsageError("--theta must lie in [0, 1]")
    return CompliancePolicy("ratio", theta)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_validate(args, out: IO[str], err: IO[str]) -> int:
    loaded = load_spec(args.spec, err)
    if isinstance(loaded, int):
        return loaded
    spec, _ = loaded
    print(
        f"{args.spec}: ok ({len(spec.values)} values, {len(spec.contexts)} contexts, "
        f"{len(spec.norms)} norms, {len(spec.requirements)} requirements)",
        file=out,
    )
    return EXIT_OK


def cmd_fmt(args, out: IO[str], err: IO[str]) -> int:
    loaded = load_spec(args.spec, err)
    if isinstance(loaded, int):
        return loaded
    out.write(serialize_spec(loaded[0]))
    return EXIT_OK


def cmd_check(args, out: IO[str], err: IO[str]) -> int:
    try:
        policy = _policy(args)
    except UsageError as exc:
        print(f"glassbox check: {exc}", file=err)
        return EXIT_USAGE
    if args.jobs < 1:
        print("glassbox check: --jobs must be at least 1", file=err)
        return EXIT_USAGE
    loaded = load_spec(args.spec, err)
    if isinstance(loaded, int):
        return loaded
    spec, digest = loaded

    warnings = []
    if args.budget is not None:
        cost = total_cost(spec)
        if cost > args.budget:
            warnings.append(f"per-event cost bound {cost} exceeds budget {args.budget}")
    for w in warnings:
        print(f"warning: {w}", file=err)

    if args.trace != "-" and not Path(args.trace).is_file():
        print(f"{args.trace}: no such file", file=err)
        return EXIT_INPUT
    verdict_fh = None
    try:
        if args.verdicts:
            verdict_fh = open(args.verdicts, "w", encoding="utf-8", newline="\n")
        report = run_check(
            spec,
            args.trace,
            policy=policy,
            spec_sha256=digest,
            strict=args.strict_schema,
            jobs=args.jobs,
            verdicts_out=verdict_fh,
            warnings=warnings,
        )
    except TraceError as exc:
        print(f"{args.trace}: {exc}", file=err)
        return EXIT_INPUT
    except EvaluationHalt as exc:
        print(f"{args.trace}: {exc}", file=err)
        return EXIT_INPUT
    except OSError as exc:
        print(f"cannot read or write: {exc}", file=err)
        return EXIT_INPUT
    finally:
        if verdict_fh is not None:
            verdict_fh.close()

    text = report.to_json()
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        out.write(render_report(json.loads(text)))
    else:
        out.write(text)
    return EXIT_OK if report.adheres else EXIT_NONADHERENT


def cmd_explain(args, out: IO[str], err: IO[str]) -> int:
    try:
        record = json.loads(Path(args.report).read_text(encoding="utf-8"))
        trees = record["explanations"]
        known_values = record["spec"]["values"]
        known_contexts = record["spec"]["contexts"]
    except FileNotFoundError:
        print(f"{args.report}: no such file", file=err)
        return EXIT_INPUT
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"{args.report}: not a glassbox report ({exc})", file=err)
        return EXIT_INPUT

    if args.value is None:
        for k, tree in enumerate(trees):
            if k:
                out.write("\n")
            out.write(render_explanation(tree))
        return EXIT_OK
    if args.context is None:
        print("glassbox explain: give both VALUE and CONTEXT, or neither", file=err)
        return EXIT_USAGE
    if args.value not in known_values:
        print(f"glassbox explain: unknown value '{args.value}'", file=err)
        return EXIT_USAGE
    if args.context not in known_contexts:
        print(f"glassbox explain: unknown context '{args.context}'", file=err)
        return EXIT_USAGE
    for tree in trees:
        if tree["value"] == args.value and tree["context"] == args.context:
            out.write(render_explanation(tree))
            return EXIT_OK
    vacuous = {
        "value": args.value,
        "context": args.context,
        "adheres": True,
        "vacuous": True,
        "formula": None,
        "tree": None,
    }
    out.write(render_explanation(vacuous))
    return EXIT_OK


def cmd_simulate(args, out: IO[str], err: IO[str]) -> int:
    try:
        config = GeneratorConfig.load(args.config)
        sim = simulate(config)
    except FileNotFoundError:
        print(f"{args.config}: no such file", file=err)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"{args.config}: invalid config: {exc}", file=err)
        return EXIT_INPUT
    except TypeError as exc:
        print(f"{args.config}: invalid config: {exc}", file=err)
        return EXIT_INPUT
    try:
        sidecar = sim.write(args.output)
    except OSError as exc:
        print(f"cannot write: {exc}", file=err)
        return EXIT_INPUT
    print(f"wrote {len(sim.events)} events to {args.output}, {len(sim.truth)} expected violations to {sidecar}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glassbox", description="Check decision traces against a value/norm/requirement hierarchy.")
    parser.add_argument("--version", action="version", version=f"glassbox {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse and validate a .gbx spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fmt", help="print a spec in canonical form")
    p.add_argument("spec")
    p.set_defaults(func=cmd_fmt)

    p = sub.add_parser("check", help="monitor a trace and report value adherence")
    p.add_argument("--spec", required=True)
    p.add_argument("--trace", required=True, help="JSONL trace, .gz accepted, '-' for standard input")
    p.add_argument("--policy", choices=("strict", "ratio"), default="strict")
    p.add_argument("--theta", help="violation ratio bound for --policy ratio, e.g. 0.02 or 1/50")
    p.add_argument("--report", help="write the JSON report here and print a text summary")
    p.add_argument("--verdicts", help="write the verdict stream (JSONL) here")
    p.add_argument("--budget", type=int, help="warn when the summed per-event cost bounds exceed this")
    p.add_argument("--strict-schema", action="store_true", help="halt on any schema mismatch or evaluation fault")
    p.add_argument("--jobs", type=int, default=1, help="evaluator worker threads")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("explain", help="render explanation trees from a report")
    p.add_argument("report")
    p.add_argument("value", nargs="?")
    p.add_argument("context", nargs="?")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("simulate", help="generate a synthetic mortgage trace with known violations")
    p.add_argument("config")
    p.add_argument("output")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None, out: IO[str] | None = None, err: IO[str] | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out, err)
    except UnknownIdError as exc:
        print(f"glassbox: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
