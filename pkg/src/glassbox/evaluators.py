"""Incremental requirement evaluators.

Each evaluator owns its window state and must see events in trace order.
``step`` returns the verdict for the event, or ``None`` when the event is
not an evaluation point (window_drift only reports at window boundaries).
"""

from __future__ import annotations

import enum
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Iterator

from .expr import Binary, EvaluationFault, Expr, compile_expression, field_refs, mirror, sides_of
from .model import (
    FieldWhitelistRequirement,
    GlassBoxSpec,
    PairwiseConsistencyRequirement,
    PerEventRequirement,
    Requirement,
    WindowDriftRequirement,
    WindowParityRequirement,
)
from .trace import Event


class Status(str, enum.Enum):
    SATISFIED = "Satisfied"
    VIOLATED = "Violated"
    INAPPLICABLE = "Inapplicable"
    PENDING = "Pending"

    def __str__(self) -> str:
        return self.value


SATISFIED = Status.SATISFIED
VIOLATED = Status.VIOLATED
INAPPLICABLE = Status.INAPPLICABLE
PENDING = Status.PENDING


@dataclass(slots=True)
class Verdict:
    req: str
    event: str
    pos: int
    status: Status
    detail: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"req": self.req, "event": self.event, "pos": self.pos, "status": self.status.value, "detail": self.detail}


class EvaluationHalt(Exception):
    """Raised in strict mode when a requirement cannot be evaluated."""

    def __init__(self, req: str, event: Event, fault: EvaluationFault):
        super().__init__(f"requirement {req} at event {event.id} (pos {event.pos}): {fault}")
        self.req = req
        self.event_id = event.id
        self.fault = fault


def fraction_text(num: int, den: int) -> str:
    return str(Fraction(num, den))


# --------------------------------------------------------------------------
# Cost classes
# --------------------------------------------------------------------------


class CostKind(str, enum.Enum):
    PER_EVENT_CONSTANT = "PerEventConstant"
    WINDOW_LINEAR = "WindowLinear"
    WINDOW_QUADRATIC = "WindowQuadratic"


@dataclass(frozen=True)
class CostClass:
    kind: CostKind
    bound: int

    @property
    def units(self) -> int:
        """Declared work per window: 1, W or W**2."""
        if self.kind is CostKind.PER_EVENT_CONSTANT:
            return 1
        if self.kind is CostKind.WINDOW_LINEAR:
            return self.bound
        return self.bound * self.bound


def cost_class(req: Requirement) -> CostClass:
    if isinstance(req, (PerEventRequirement, FieldWhitelistRequirement)):
        return CostClass(CostKind.PER_EVENT_CONSTANT, 1)
    size = req.window_size or 1
    if isinstance(req, PairwiseConsistencyRequirement):
        return CostClass(CostKind.WINDOW_QUADRATIC, size)
    return CostClass(CostKind.WINDOW_LINEAR, size)


def total_cost(spec: GlassBoxSpec) -> int:
    return sum(cost_class(r).units for r in spec.requirements)


# --------------------------------------------------------------------------
# Evaluators
# --------------------------------------------------------------------------


class Evaluator:
    def __init__(self, req: Requirement, strict: bool = False):
        self.req = req
        self.rid = req.id
        self.strict = strict
        self.warnings = 0

    def step(self, event: Event) -> Verdict | None:
        raise NotImplementedError

    def _fault(self, event: Event, fault: EvaluationFault) -> None:
        if self.strict:
            raise EvaluationHalt(self.rid, event, fault)
        self.warnings += 1


def _bound_values(refs, a: Event, b: Event | None = None) -> dict[str, Any]:
    out = {}
    for ref in refs:
        ev = b if ref.side == "b" else a
        out[ref.path] = ev.section(ref.section).get(ref.name)
    return out


class PerEventEvaluator(Evaluator):
    def __init__(self, req: PerEventRequirement, strict: bool = False):
        super().__init__(req, strict)
        self.when = compile_expression(req.when) if req.when is not None else None
        self.then = compile_expression(req.then)
        exprs = [e for e in (req.when, req.then) if e is not None]
        refs = {}
        for e in exprs:
            for ref in field_refs(e):
                refs.setdefault(ref.path, ref)
        self.refs = list(refs.values())

    def step(self, event: Event) -> Verdict:
        when, then = self.when, self.then
        try:
            if when is not None and not when(event, None):
                return Verdict(self.rid, event.id, event.pos, INAPPLICABLE, {})
            ok = then(event, None)
        except EvaluationFault as fault:
            self._fault(event, fault)
            return Verdict(self.rid, event.id, event.pos, INAPPLICABLE, {"fault": str(fault)})
        if ok:
            return Verdict(self.rid, event.id, event.pos, SATISFIED, {})
        return Verdict(self.rid, event.id, event.pos, VIOLATED, {"fields": _bound_values(self.refs, event)})


class FieldWhitelistEvaluator(Evaluator):
    def __init__(self, req: FieldWhitelistRequirement, strict: bool = False):
        super().__init__(req, strict)
        self.allowed = frozenset(req.allowed)
        self.section = req.section

    def step(self, event: Event) -> Verdict:
        present = event.section(self.section)
        if self.allowed.issuperset(present):
            return Verdict(self.rid, event.id, event.pos, SATISFIED, {})
        extra = sorted(set(present) - self.allowed)
        return Verdict(self.rid, event.id, event.pos, VIOLATED, {"section": self.section, "extra": extra})


_EXCLUDED = object()


class WindowParityEvaluator(Evaluator):
    """Demographic parity over the last W events, with exact rational rates."""

    def __init__(self, req: WindowParityRequirement, strict: bool = False):
        super().__init__(req, strict)
        self.size = req.window.size
        self.group_by = compile_expression(req.group_by)
        self.outcome = compile_expression(req.outcome)
        self.max_gap = req.max_gap
        self.min_samples = req.min_samples
        self.window: deque = deque()
        # group -> [events, positives]
        self.counts: dict[Any, list[int]] = {}
        self.samples = 0

    def _add(self, group, positive: bool) -> None:
        c = self.counts.get(group)
        if c is None:
            c = self.counts[group] = [0, 0]
        c[0] += 1
        if positive:
            c[1] += 1
        self.samples += 1

    def _remove(self, group, positive: bool) -> None:
        c = self.counts[group]
        c[0] -= 1
        if positive:
            c[1] -= 1
        if c[0] == 0:
            del self.counts[group]
        self.samples -= 1

    def step(self, event: Event) -> Verdict:
        try:
            group = self.group_by(event, None)
            positive = bool(self.outcome(event, None))
            entry = (group, positive)
        except EvaluationFault:
            self.warnings += 1
            entry = _EXCLUDED
        self.window.append(entry)
        if entry is not _EXCLUDED:
            self._add(*entry)
        if len(self.window) > self.size:
            old = self.window.popleft()
            if old is not _EXCLUDED:
                self._remove(*old)

        if self.samples < self.min_samples:
            return Verdict(self.rid, event.id, event.pos, PENDING, {"samples": self.samples, "min_samples": self.min_samples})

        # max and min rate by cross-multiplication: p1/n1 > p2/n2 <=> p1*n2 > p2*n1
        hi = lo = None
        for c in self.counts.values():
            if hi is None or c[1] * hi[0] > hi[1] * c[0]:
                hi = c
            if lo is None or c[1] * lo[0] < lo[1] * c[0]:
                lo = c
        gap_num = hi[1] * lo[0] - lo[1] * hi[0]
        gap_den = hi[0] * lo[0]
        limit = self.max_gap
        ok = gap_num * limit.denominator <= limit.numerator * gap_den
        groups = [
            {"group": g, "n": c[0], "positive": c[1], "rate": fraction_text(c[1], c[0])}
            for g, c in sorted(self.counts.items(), key=lambda kv: kv[0])
        ]
        detail = {
            "samples": self.samples,
            "groups": groups,
            "gap": fraction_text(gap_num, gap_den),
            "max_gap": str(limit),
        }
        return Verdict(self.rid, event.id, event.pos, SATISFIED if ok else VIOLATED, detail)


class WindowDriftEvaluator(Evaluator):
    """Compares the outcome rate of consecutive, non-overlapping windows of W
    events. Reports only at window boundaries."""

    def __init__(self, req: WindowDriftRequirement, strict: bool = False):
        super().__init__(req, strict)
        self.size = req.window.size
        self.rate = compile_expression(req.rate)
        self.max_delta = req.max_delta
        self.seen = 0
        self.n = 0
        self.positive = 0
        self.previous: tuple[int, int] | None = None

    def step(self, event: Event) -> Verdict | None:
        try:
            hit = self.rate(event, None)
            self.n += 1
            if hit:
                self.positive += 1
        except EvaluationFault:
            self.warnings += 1
        self.seen += 1
        if self.seen % self.size:
            return None
        current = (self.n, self.positive)
        previous = self.previous
        self.previous = current
        self.n = self.positive = 0
        cur = {"n": current[0], "positive": current[1]}
        if previous is None:
            return Verdict(self.rid, event.id, event.pos, PENDING, {"current": cur})
        prev = {"n": previous[0], "positive": previous[1]}
        if previous[0] == 0 or current[0] == 0:
            return Verdict(self.rid, event.id, event.pos, INAPPLICABLE, {"previous": prev, "current": cur})
        n0, p0 = previous
        n1, p1 = current
        delta_num = abs(p1 * n0 - p0 * n1)
        delta_den = n0 * n1
        limit = self.max_delta
        ok = delta_num * limit.denominator <= limit.numerator * delta_den
        prev["rate"] = fraction_text(p0, n0)
        cur["rate"] = fraction_text(p1, n1)
        detail = {
            "previous": prev,
            "current": cur,
            "delta": fraction_text(delta_num, delta_den),
            "max_delta": str(limit),
        }
        return Verdict(self.rid, event.id, event.pos, SATISFIED if ok else VIOLATED, detail)


def _conjuncts(expr: Expr) -> list[Expr]:
    if isinstance(expr, Binary) and expr.op == "and":
        return _conjuncts(expr.left) + _conjuncts(expr.right)
    return [expr]


def split_similarity(expr: Expr) -> tuple[list[Expr], list[Expr]]:
    """Split a similarity predicate into blocking keys and residual conjuncts.

    A conjunct ``f(a) == f(b)`` (one side the a/b mirror of the other) holds
    exactly when both events have the same value of ``f``, so it can be
    answered by hashing. Keys are returned as a-side expressions.
    """
    keys, rest = [], []
    for c in _conjuncts(expr):
        if isinstance(c, Binary) and c.op == "==" and c.right == mirror(c.left):
            sides = sides_of(c.left)
            if sides == {"a"}:
                keys.append(c.left)
                continue
            if sides == {"b"}:
                keys.append(c.right)
                continue
        rest.append(c)
    return keys, rest


_NOKEY = object()


class PairwiseConsistencyEvaluator(Evaluator):
    """Compares each new event with the prior events of its window (the last
    W events including itself). Prior events are indexed by the equality
    conjuncts of the similarity predicate."""

    max_listed_pairs = 10

    def __init__(self, req: PairwiseConsistencyRequirement, strict: bool = False):
        super().__init__(req, strict)
        self.size = req.window.size
        keys, rest = split_similarity(req.similar)
        self.key_fns = [compile_expression(k) for k in keys]
        self.rest_fns = [compile_expression(r) for r in rest]
        self.consistent = compile_expression(req.consistent)
        self.consistent_refs = field_refs(req.consistent)
        self.window: deque[tuple[Event, Any]] = deque()
        self.buckets: dict[Any, deque[Event]] = {}

    def _key(self, event: Event):
        try:
            return tuple(f(event, None) for f in self.key_fns)
        except EvaluationFault:
            return _NOKEY

    def step(self, event: Event) -> Verdict:
        limit = event.pos - self.size + 1
        window, buckets = self.window, self.buckets
        while window and window[0][0].pos < limit:
            old, old_key = window.popleft()
            if old_key is not _NOKEY:
                bucket = buckets[old_key]
                bucket.popleft()
                if not bucket:
                    del buckets[old_key]

        key = self._key(event)
        similar = 0
        bad: list[Event] = []
        if key is _NOKEY:
            if window:
                self.warnings += 1
        else:
            rest = self.rest_fns
            consistent = self.consistent
            for prior in buckets.get(key, ()):
                try:
                    # strict conjunction: every residual conjunct is evaluated
                    results = [f(event, prior) for f in rest]
                    if not all(results):
                        continue
                    ok = consistent(event, prior)
                except EvaluationFault:
                    self.warnings += 1
                    continue
                similar += 1
                if not ok:
                    bad.append(prior)

        window.append((event, key))
        if key is not _NOKEY:
            bucket = buckets.get(key)
            if bucket is None:
                bucket = buckets[key] = deque()
            bucket.append(event)

        if bad:
            pairs = [
                {
                    "prior": p.id,
                    "prior_pos": p.pos,
                    "values": _bound_values(self.consistent_refs, event, p),
                }
                for p in bad[: self.max_listed_pairs]
            ]
            detail = {"similar": similar, "inconsistent": len(bad), "pairs": pairs}
            return Verdict(self.rid, event.id, event.pos, VIOLATED, detail)
        if similar:
            return Verdict(self.rid, event.id, event.pos, SATISFIED, {"similar": similar})
        return Verdict(self.rid, event.id, event.pos, INAPPLICABLE, {})


_EVALUATORS = {
    "per_event": PerEventEvaluator,
    "window_parity": WindowParityEvaluator,
    "pairwise_consistency": PairwiseConsistencyEvaluator,
    "window_drift": WindowDriftEvaluator,
    "field_whitelist": FieldWhitelistEvaluator,
}


def make_evaluator(req: Requirement, strict: bool = False) -> Evaluator:
    return _EVALUATORS[req.kind](req, strict)


def largest_window(spec: GlassBoxSpec) -> int:
    return max((r.window_size or 1 for r in spec.requirements), default=1)


# --------------------------------------------------------------------------
# Driving a whole spec
# --------------------------------------------------------------------------


class Monitor:
    """Runs every requirement of a spec over an event stream.

    Verdicts come out ordered by (position, requirement id) whatever
    ``jobs`` is. With ``jobs > 1`` requirements are sharded across worker
    threads, each shard processing a batch of events in order.
    """

    def __init__(self, spec: GlassBoxSpec, *, strict: bool = False, jobs: int = 1, batch: int = 2048):
        self.spec = spec
        self.evaluators = [make_evaluator(r, strict) for r in sorted(spec.requirements, key=lambda r: r.id)]
        self.jobs = max(1, jobs)
        self.batch = batch

    @property
    def warnings(self) -> dict[str, int]:
        return {e.rid: e.warnings for e in self.evaluators}

    def run(self, events: Iterable[Event]) -> Iterator[Verdict]:
        if self.jobs == 1 or len(self.evaluators) < 2:
            yield from self._run_serial(events)
        else:
            yield from self._run_parallel(events)

    def _run_serial(self, events: Iterable[Event]) -> Iterator[Verdict]:
        steps = [e.step for e in self.evaluators]
        for event in events:
            for step in steps:
                v = step(event)
                if v is not None:
                    yield v

    def _run_parallel(self, events: Iterable[Event]) -> Iterator[Verdict]:
        n = min(self.jobs, len(self.evaluators))
        shards = [self.evaluators[i::n] for i in range(n)]

        def work(shard, batch):
            out = []
            for event in batch:
                for ev in shard:
                    v = ev.step(event)
                    if v is not None:
                        out.append(v)
            return out

        with ThreadPoolExecutor(max_workers=n) as pool:
            batch: list[Event] = []
            for event in events:
                batch.append(event)
                if len(batch) >= self.batch:
                    yield from self._merge(pool, shards, work, batch)
                    batch = []
            if batch:
                yield from self._merge(pool, shards, work, batch)

    @staticmethod
    def _merge(pool, shards, work, batch) -> list[Verdict]:
        futures = [pool.submit(work, shard, batch) for shard in shards]
        merged: list[Verdict] = []
        for f in futures:
            merged.extend(f.result())
        merged.sort(key=lambda v: (v.pos, v.req))
        return merged
