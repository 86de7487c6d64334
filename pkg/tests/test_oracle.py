from __future__ import annotations

import random

import pytest

from glassbox.evaluators import Monitor
from glassbox.trace import read_trace

import oracle
from gen import random_records, to_lines, trace_spec


def _case(seed, n, max_window):
    rng = random.Random(seed)
    spec = trace_spec(rng, max_window=max_window)
    events = list(read_trace(to_lines(random_records(rng, n)), spec.schema))
    return spec, events


@pytest.mark.parametrize("seed", range(25))
def test_monitor_matches_brute_force(seed):
    spec, events = _case(seed, 150, 40)
    got = [v.to_record() for v in Monitor(spec).run(events)]
    assert got == oracle.verdicts(spec, events)


@pytest.mark.parametrize("seed", range(25))
def test_pairwise_details_match_double_loop(seed):
    spec, events = _case(1000 + seed, 200, 60)
    records = [v.to_record() for v in Monitor(spec).run(events)]
    for req in spec.requirements:
        if req.kind == "pairwise_consistency":
            assert oracle.check_all_pairs(req, events, records) == []


def test_random_cases_exercise_every_status():
    statuses = set()
    pairs = 0
    for seed in range(25):
        spec, events = _case(1000 + seed, 200, 60)
        statuses |= {r["status"] for r in oracle.verdicts(spec, events)}
        pairs += sum(
            len(oracle.all_pairs_inconsistent(r, events)) for r in spec.requirements if r.kind == "pairwise_consistency"
        )
    assert statuses == {"Satisfied", "Violated", "Inapplicable", "Pending"}
    assert pairs > 100
