from __future__ import annotations

import hashlib
import json
import random

import pytest

from glassbox.evaluators import Monitor, Status
from glassbox.generator import (
    INJECTABLE,
    ConfigError,
    GeneratorConfig,
    reference_decision,
    reference_interest,
    simulate,
    truth_path,
)

from conftest import simulated_events


def violated_pairs(spec, sim):
    events = simulated_events(spec, sim)
    return {(v.event, v.req) for v in Monitor(spec).run(events) if v.status is Status.VIOLATED}


def truth_pairs(sim):
    return {(t.event, t.req) for t in sim.truth}


def test_same_seed_gives_identical_bytes(tmp_path):
    digests = set()
    for i in range(3):
        path = tmp_path / f"t{i}.jsonl"
        simulate(GeneratorConfig(events=1000, seed=42)).write(path)
        digests.add(hashlib.sha256(path.read_bytes()).hexdigest())
    assert len(digests) == 1
    assert (tmp_path / "t0.jsonl").read_text().count("\n") == 1000


def test_different_seeds_differ():
    a = list(simulate(GeneratorConfig(events=50, seed=1)).trace_lines())
    b = list(simulate(GeneratorConfig(events=50, seed=2)).trace_lines())
    assert a != b


def test_five_similarity_injections_give_five_entries(tmp_path):
    sim = simulate(GeneratorConfig(events=1000, seed=42, inject={"R_SimilarSameDecision": 5}))
    sidecar = sim.write(tmp_path / "t.jsonl")
    assert sidecar == truth_path(tmp_path / "t.jsonl")
    lines = sidecar.read_text().splitlines()
    assert len(lines) == 5
    assert {json.loads(x)["req"] for x in lines} == {"R_SimilarSameDecision"}


def test_zero_events(tmp_path):
    sim = simulate(GeneratorConfig(events=0, seed=1))
    path = tmp_path / "t.jsonl"
    sim.write(path)
    assert path.read_bytes() == b""
    assert truth_path(path).read_bytes() == b""


def test_clean_trace_has_no_violations(mortgage):
    for seed in range(3):
        sim = simulate(GeneratorConfig(events=3000, seed=seed))
        assert sim.truth == []
        assert violated_pairs(mortgage, sim) == set()


def test_clean_decisions_follow_the_reference_rule():
    for rec in simulate(GeneratorConfig(events=300, seed=9)).events:
        assert rec["out"]["decision"] == reference_decision(rec["in"])
        if rec["out"]["decision"] == "grant":
            assert rec["out"]["interest_bp"] == reference_interest(rec["env"]["central_bank_bp"])


@pytest.mark.parametrize("rid", INJECTABLE)
def test_each_injection_kind_is_detected_exactly(mortgage, rid):
    n = 3000 if rid == "R_Drift" else 1500
    sim = simulate(GeneratorConfig(events=n, seed=17, inject={rid: 2 if rid != "R_Drift" else 1}))
    assert sim.truth
    assert {r for _, r in truth_pairs(sim)} == {rid}
    assert violated_pairs(mortgage, sim) == truth_pairs(sim)


def test_mixed_injections_are_detected_exactly(mortgage):
    rng = random.Random(5)
    inject = {rid: rng.randint(1, 6) for rid in INJECTABLE if rid != "R_Drift"}
    inject["R_Drift"] = 1
    sim = simulate(GeneratorConfig(events=5000, seed=23, inject=inject))
    assert violated_pairs(mortgage, sim) == truth_pairs(sim)


@pytest.mark.parametrize(
    "data, message",
    [
        ({"events": -1}, "non-negative"),
        ({"seed": "x"}, "seed"),
        ({"colour": "blue"}, "unknown config keys"),
        ({"inject": {"R_Nope": 1}}, "unknown injection target"),
        ({"inject": {"R_Afford30_NoRefusal": 1}}, "cannot be injected"),
        ({"inject": {"R_Afford30": -2}}, "non-negative"),
        ({"inject": [1]}, "inject"),
        ({"age_range": [30, 40]}, "age_range"),
        ({"loan_range": [5, 1]}, "loan_range"),
        ([], "JSON object"),
    ],
)
def test_config_errors(data, message):
    with pytest.raises(ConfigError, match=message):
        GeneratorConfig.from_dict(data)


def test_too_many_injections_for_the_trace():
    with pytest.raises(ConfigError):
        simulate(GeneratorConfig(events=20, seed=1, inject={"R_Afford30": 50}))
    with pytest.raises(ConfigError):
        simulate(GeneratorConfig(events=500, seed=1, inject={"R_Drift": 1}))


def test_load_reads_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"events": 10, "seed": 3, "inject": {"R_Rate15": 1}}))
    cfg = GeneratorConfig.load(p)
    assert (cfg.events, cfg.seed, cfg.inject) == (10, 3, {"R_Rate15": 1})
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        GeneratorConfig.load(p)
