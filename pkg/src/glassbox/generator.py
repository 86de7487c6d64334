"""Synthetic mortgage traces with known violations.

Clean traces are built so that no requirement of the shipped mortgage spec
is violated:

* Decisions follow blocks of four slots, each block a random permutation of
  (young grant, young deny, old grant, old deny). Every group therefore has
  the same grant rate up to one block, and consecutive windows have the
  same overall grant rate.
* Incomes sit on a 250.00 lattice and loans on a 10000.00 lattice, wider
  than the similarity tolerances, so two clean applicants are similar only
  when income and loan are identical. The instalment is a function of the
  loan, so similar clean applicants always get the same decision.
* The execution value is chosen so that the affordability and loan-to-value
  tests agree, and the decision is the reference rule applied to both.

Injections then alter chosen slots while keeping each slot's group and
outcome (except the parity and drift injections, whose schedule changes are
tallied directly). Every violation the monitor should report is written to
a ground-truth sidecar.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterator

from .model import GlassBoxSpec
from .trace import dump_event

MORTGAGE_SPEC = "mortgage.gbx"

INCOME_STEP = 25_000
LOAN_STEP = 1_000_000
OFF_LATTICE = INCOME_STEP // 2
INSTALMENT_PER_MILLE = 6

YOUNG, OLD = 1, 2
GROUP_AGES = {YOUNG: (25, 49), OLD: (50, 74)}

INJECTABLE = (
    "R_Afford30",
    "R_Exec70",
    "R_Rate15",
    "R_TaxFieldsOnly",
    "R_SimilarSameDecision",
    "R_Parity",
    "R_Drift",
)


def mortgage_spec_text() -> str:
    return resources.files("glassbox").joinpath("data", MORTGAGE_SPEC).read_text(encoding="utf-8")


def mortgage_spec_path() -> Path:
    return Path(str(resources.files("glassbox").joinpath("data", MORTGAGE_SPEC)))


def load_mortgage_spec() -> GlassBoxSpec:
    from .parser import parse_spec

    return parse_spec(mortgage_spec_text())


class ConfigError(ValueError):
    pass


def _pair(value, name: str) -> tuple[int, int]:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(x, int) and not isinstance(x, bool) for x in value)
        or value[0] > value[1]
    ):
        raise ConfigError(f"{name} must be a pair [low, high] of integers with low <= high")
    return int(value[0]), int(value[1])


@dataclass
class GeneratorConfig:
    events: int = 1000
    seed: int = 0
    age_range: tuple[int, int] = (25, 74)
    income_range: tuple[int, int] = (150_000, 1_000_000)
    loan_range: tuple[int, int] = (5_000_000, 50_000_000)
    central_bank_range: tuple[int, int] = (50, 400)
    start_ts: int = 1_700_000_000_000
    inject: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.events, int) or self.events < 0:
            raise ConfigError("events must be a non-negative integer")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        self.age_range = _pair(self.age_range, "age_range")
        self.income_range = _pair(self.income_range, "income_range")
        self.loan_range = _pair(self.loan_range, "loan_range")
        self.central_bank_range = _pair(self.central_bank_range, "central_bank_range")
        lo, hi = self.age_range
        if not (25 <= lo <= 49 and 50 <= hi <= 74):
            raise ConfigError("age_range must start in 25..49 and end in 50..74 so both age groups occur")
        if self.central_bank_range[0] < 0:
            raise ConfigError("central_bank_range must be non-negative")
        if self.loan_range[0] <= 0:
            raise ConfigError("loan_range must be positive")
        for rid, count in self.inject.items():
            if rid == "R_Afford30_NoRefusal":
                raise ConfigError(
                    "R_Afford30_NoRefusal cannot be injected: the reference rule never refuses an affordable loan"
                    " unless the loan-to-value test fails, which is exactly what the requirement allows"
                )
            if rid not in INJECTABLE:
                raise ConfigError(f"unknown injection target '{rid}' (choose from {', '.join(INJECTABLE)})")
            if not isinstance(count, int) or isinstance(count, bool) or count < 0:
                raise ConfigError(f"injection count for {rid} must be a non-negative integer")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GeneratorConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        inject = data.get("inject", {})
        if not isinstance(inject, dict):
            raise ConfigError("inject must map requirement ids to counts")
        return cls(**{**data, "inject": dict(inject)})

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass(frozen=True)
class TruthEntry:
    event: str
    req: str
    injection: int | None

    def to_record(self) -> dict:
        return {"event": self.event, "req": self.req, "injection": self.injection}


@dataclass
class Simulation:
    events: list[dict]
    truth: list[TruthEntry]

    def trace_lines(self) -> Iterator[str]:
        for e in self.events:
            yield dump_event(e) + "\n"

    def truth_lines(self) -> Iterator[str]:
        for t in self.truth:
            yield dump_event(t.to_record()) + "\n"

    def write(self, path) -> Path:
        """Write the trace to ``path`` and the ground truth next to it;
        returns the sidecar path."""
        path = Path(path)
        sidecar = truth_path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(self.trace_lines())
        with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(self.truth_lines())
        return sidecar


def truth_path(trace_path) -> Path:
    p = Path(trace_path)
    return p.with_name(p.name + ".truth.jsonl")


def affordable(instalment: int, income: int) -> bool:
    return instalment * 10 < income * 3


def covered(loan: int, execution_value: int) -> bool:
    return loan * 10 <= execution_value * 7


def reference_decision(inp: dict) -> str:
    """The rule the simulated bank follows."""
    ok = affordable(inp["monthly_instalment"], inp["expected_monthly_income"]) and covered(
        inp["loan_amount"], inp["execution_value"]
    )
    return "grant" if ok else "deny"


def reference_interest(central_bank_bp: int) -> int:
    """1.2 times the central bank rate, rounded half up to whole basis points."""
    return (central_bank_bp * 12 + 5) // 10


class _Builder:
    def __init__(self, config: GeneratorConfig, spec: GlassBoxSpec):
        self.cfg = config
        self.rng = random.Random(config.seed)
        self.spec = spec
        parity = spec.requirement("R_Parity")
        drift = spec.requirement("R_Drift")
        pairwise = spec.requirement("R_SimilarSameDecision")
        self.parity_w = parity.window.size
        self.parity_gap: Fraction = parity.max_gap
        self.parity_min = parity.min_samples
        self.drift_w = drift.window.size
        self.drift_delta: Fraction = drift.max_delta
        self.pair_w = pairwise.window.size

        lo, hi = config.income_range
        self.incomes = list(range(-(-lo // INCOME_STEP) * INCOME_STEP, hi + 1, INCOME_STEP))
        self.off_incomes = [x + OFF_LATTICE for x in self.incomes if x + OFF_LATTICE <= hi]
        lo, hi = config.loan_range
        self.loans = list(range(-(-lo // LOAN_STEP) * LOAN_STEP, hi + 1, LOAN_STEP))
        self.grant_pairs = [(i, l) for i in self.incomes for l in self.loans if affordable(self._inst(l), i)]
        self.deny_pairs = [(i, l) for i in self.incomes for l in self.loans if not affordable(self._inst(l), i)]
        self.off_grant = [(i, l) for i in self.off_incomes for l in self.loans if affordable(self._inst(l), i)]
        self.off_deny = [(i, l) for i in self.off_incomes for l in self.loans if not affordable(self._inst(l), i)]
        n = config.events
        if n and not (self.grant_pairs and self.deny_pairs):
            raise ConfigError("income_range and loan_range must allow both affordable and unaffordable loans")
        self.used_keys: set[tuple[int, int, int]] = set()

    @staticmethod
    def _inst(loan: int) -> int:
        return loan * INSTALMENT_PER_MILLE // 1000

    # -- schedule --------------------------------------------------------

    def schedule(self) -> list[tuple[int, bool]]:
        n = self.cfg.events
        roles: list[tuple[int, bool]] = []
        base = [(YOUNG, True), (YOUNG, False), (OLD, True), (OLD, False)]
        while len(roles) < n:
            block = base[:]
            self.rng.shuffle(block)
            roles.extend(block)
        return roles[:n]

    # -- helpers ---------------------------------------------------------

    def _age(self, group: int, bucket5: int | None = None) -> int:
        lo, hi = GROUP_AGES[group]
        lo = max(lo, self.cfg.age_range[0])
        hi = min(hi, self.cfg.age_range[1])
        if bucket5 is not None:
            return self.rng.randint(max(lo, bucket5 * 5), min(hi, bucket5 * 5 + 4))
        return self.rng.randint(lo, hi)

    def _exec_value(self, loan: int, cover: bool) -> int:
        threshold = -(-loan * 10 // 7)  # smallest value with loan*10 <= value*7
        if cover:
            return threshold + 100_000 * self.rng.randint(0, 40)
        return self.rng.randint(loan, threshold - 1)

    def _unique_off(self, pairs: list[tuple[int, int]], group: int) -> tuple[int, int, int]:
        """An off-lattice (income, loan, age) whose similarity key is unused."""
        if not pairs:
            raise ConfigError("income_range too narrow for off-lattice injections")
        for _ in range(1000):
            income, loan = self.rng.choice(pairs)
            age = self._age(group)
            key = (income, loan, age // 5)
            if key not in self.used_keys:
                self.used_keys.add(key)
                return income, loan, age
        raise ConfigError("could not find an unused applicant profile for an injection")

    # -- build -----------------------------------------------------------

    def build(self) -> Simulation:
        cfg, rng = self.cfg, self.rng
        n = cfg.events
        roles = self.schedule()
        injection_no = 0
        reserved: set[int] = set()
        truth: list[tuple[int, str, int | None]] = []

        # drift: whole windows of flipped (all-grant) blocks
        flipped_windows: dict[int, int] = {}
        want = cfg.inject.get("R_Drift", 0)
        if want:
            w = self.drift_w
            complete = n // w
            candidates = [k for k in range(complete) if k >= 1 or k + 1 < complete]
            chosen = self._non_adjacent(candidates, want)
            if chosen is None:
                raise ConfigError(f"not enough drift windows for {want} R_Drift injections")
            flips = int(w * self.drift_delta / 2) + w // 50 + 2
            for k in sorted(chosen):
                injection_no += 1
                flipped_windows[k] = injection_no
                blocks = [b for b in range(-(-k * w // 4), ((k + 1) * w) // 4) if 4 * b + 4 <= (k + 1) * w]
                if len(blocks) < flips:
                    raise ConfigError("drift window too small to inject a violation")
                for b in rng.sample(blocks, flips):
                    for p in range(4 * b, 4 * b + 4):
                        roles[p] = (roles[p][0], True)
                reserved.update(range(k * w, (k + 1) * w))

        # parity: bursts in which one group is always granted, the other never
        bursts: list[tuple[int, int, int]] = []
        want = cfg.inject.get("R_Parity", 0)
        if want:
            nblocks = -(-self.parity_w // 4)
            span = 4 * nblocks
            starts = [
                s for s in range(0, n - span + 1, 4)
                if not reserved.intersection(range(s, min(n, s + span + self.parity_w)))
            ]
            rng.shuffle(starts)
            taken: list[int] = []
            for s in starts:
                if len(taken) == want:
                    break
                if all(abs(s - t) >= span + self.parity_w for t in taken):
                    taken.append(s)
            if len(taken) < want:
                raise ConfigError(f"not enough room for {want} R_Parity injections")
            favoured = [rng.choice((YOUNG, OLD)) for _ in taken]
            for s, fav in sorted(zip(taken, favoured)):
                injection_no += 1
                bursts.append((s, s + span, injection_no))
                for b in range(s // 4, (s + span) // 4):
                    block = [(fav, True), (fav, True), (3 - fav, False), (3 - fav, False)]
                    rng.shuffle(block)
                    roles[4 * b: 4 * b + 4] = block
                reserved.update(range(s, s + span))

        # simulate the aggregate requirements over the schedule
        truth += self._parity_truth(roles, bursts)
        truth += self._drift_truth(roles, flipped_windows)

        # per-slot injections
        plans: dict[int, tuple[str, Any]] = {}
        free = [p for p in range(n) if p not in reserved]
        rng.shuffle(free)
        free_set = set(free)

        def take(pred) -> int:
            for p in free:
                if p in free_set and pred(p):
                    free_set.discard(p)
                    return p
            raise ConfigError("not enough eligible events for the requested injections")

        for rid in ("R_Afford30", "R_Exec70", "R_Rate15", "R_TaxFieldsOnly"):
            for _ in range(cfg.inject.get(rid, 0)):
                if rid in ("R_Afford30", "R_Exec70"):
                    p = take(lambda q: not roles[q][1])
                elif rid == "R_Rate15":
                    p = take(lambda q: roles[q][1])
                else:
                    p = take(lambda q: True)
                injection_no += 1
                plans[p] = (rid, injection_no)
                truth.append((p, rid, injection_no))

        for _ in range(cfg.inject.get("R_SimilarSameDecision", 0)):
            first = None
            for p in free:
                if p not in free_set or not roles[p][1]:
                    continue
                group = roles[p][0]
                partners = [
                    q for q in range(max(0, p - self.pair_w + 1), min(n, p + self.pair_w))
                    if q in free_set and q != p and roles[q] == (group, False)
                ]
                if partners:
                    first = (p, rng.choice(partners))
                    break
            if first is None:
                raise ConfigError("not enough eligible event pairs for R_SimilarSameDecision injections")
            p, q = first
            free_set.discard(p)
            free_set.discard(q)
            injection_no += 1
            income, loan, age = self._unique_off(self.off_grant, roles[p][0])
            plans[p] = ("pair_grant", (income, loan, age))
            plans[q] = ("pair_deny", (income, loan, age))
            truth.append((max(p, q), "R_SimilarSameDecision", injection_no))

        events = self._events(roles, plans)
        truth.sort(key=lambda t: (t[0], t[1]))
        return Simulation(events, [TruthEntry(events[p]["id"], r, i) for p, r, i in truth])

    def _non_adjacent(self, candidates: list[int], want: int) -> list[int] | None:
        for _ in range(50):
            pool = candidates[:]
            self.rng.shuffle(pool)
            chosen: list[int] = []
            for k in pool:
                if all(abs(k - c) > 1 for c in chosen):
                    chosen.append(k)
                if len(chosen) == want:
                    return chosen
        return None

    def _parity_truth(self, roles, bursts) -> list[tuple[int, str, int | None]]:
        out = []
        window: deque = deque()
        counts = {YOUNG: [0, 0], OLD: [0, 0]}
        gap = self.parity_gap
        for pos, (group, grant) in enumerate(roles):
            window.append((group, grant))
            counts[group][0] += 1
            counts[group][1] += grant
            if len(window) > self.parity_w:
                g, o = window.popleft()
                counts[g][0] -= 1
                counts[g][1] -= o
            if len(window) < self.parity_min:
                continue
            rates = [Fraction(p, n) for n, p in counts.values() if n]
            if max(rates) - min(rates) > gap:
                lo = pos - self.parity_w + 1
                owner = next((i for s, e, i in bursts if s <= pos and e > lo), None)
                out.append((pos, "R_Parity", owner))
        return out

    def _drift_truth(self, roles, flipped) -> list[tuple[int, str, int | None]]:
        w = self.drift_w
        rates = [
            Fraction(sum(1 for _, g in roles[k * w:(k + 1) * w] if g), w) for k in range(len(roles) // w)
        ]
        out = []
        for k in range(1, len(rates)):
            if abs(rates[k] - rates[k - 1]) > self.drift_delta:
                owner = flipped.get(k, flipped.get(k - 1))
                out.append(((k + 1) * w - 1, "R_Drift", owner))
        return out

    def _events(self, roles, plans) -> list[dict]:
        cfg, rng = self.cfg, self.rng
        cb_lo, cb_hi = cfg.central_bank_range
        cb = rng.randint(cb_lo, cb_hi)
        ts = cfg.start_ts
        events = []
        for pos, (group, grant) in enumerate(roles):
            ts += rng.randint(1, 5000)
            cb = min(cb_hi, max(cb_lo, cb + rng.randint(-2, 2)))
            plan = plans.get(pos)
            kind = plan[0] if plan else None
            if kind == "R_Afford30":
                # affordable but poorly covered, refused anyway
                income, loan, age = self._unique_off(self.off_grant, group)
                inst = self._inst(loan)
                exec_value = self._exec_value(loan, cover=False)
            elif kind == "R_Exec70":
                # well covered but unaffordable, refused
                income, loan, age = self._unique_off(self.off_deny, group)
                inst = self._inst(loan)
                exec_value = self._exec_value(loan, cover=True)
            elif kind == "pair_grant":
                income, loan, age = plan[1]
                inst = self._inst(loan)
                exec_value = self._exec_value(loan, cover=True)
            elif kind == "pair_deny":
                income, loan, age0 = plan[1]
                age = self._age(group, age0 // 5)
                # a dearer instalment on the same loan makes it unaffordable
                inst = -(-income * 3 // 10) + 100 * rng.randint(0, 500)
                exec_value = self._exec_value(loan, cover=False)
            else:
                income, loan = rng.choice(self.grant_pairs if grant else self.deny_pairs)
                age = self._age(group)
                inst = self._inst(loan)
                exec_value = self._exec_value(loan, cover=grant)
            inp: dict[str, Any] = {
                "age": age,
                "expected_monthly_income": income,
                "loan_amount": loan,
                "monthly_instalment": inst,
                "execution_value": exec_value,
            }
            if kind == "R_TaxFieldsOnly":
                extra = rng.choice((("marital_status",), ("expecting_child",), ("marital_status", "expecting_child")))
                if "marital_status" in extra:
                    inp["marital_status"] = rng.choice(("single", "married", "divorced", "widowed"))
                if "expecting_child" in extra:
                    inp["expecting_child"] = rng.random() < 0.5
            decision = "grant" if grant else "deny"
            if reference_decision(inp) != decision:  # pragma: no cover - construction invariant
                raise RuntimeError(f"generator produced an off-policy decision at position {pos}")
            interest = reference_interest(cb) if grant else 0
            if kind == "R_Rate15":
                interest = cb * 15 // 10 + 1 + rng.randint(0, 50)
            events.append({
                "id": f"e{pos + 1}",
                "ts": ts,
                "in": inp,
                "out": {"decision": decision, "interest_bp": interest},
                "env": {"central_bank_bp": cb},
            })
        return events


def simulate(config: GeneratorConfig, spec: GlassBoxSpec | None = None) -> Simulation:
    """Generate a trace and its ground truth. Deterministic in ``config``."""
    return _Builder(config, spec or load_mortgage_spec()).build()
