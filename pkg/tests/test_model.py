from __future__ import annotations

import random
from graphlib import TopologicalSorter

import pytest

from gen import random_spec
from glassbox import UnknownIdError, parse_spec, validate_hierarchy
from glassbox.model import GlassBoxSpec, Value, Context, formula_leaves


def test_values_of_requirement(mortgage):
    assert mortgage.values_of_requirement("R_Afford30", "bank_vs_customer") == {"Fairness"}
    assert mortgage.values_of_requirement("R_TaxFieldsOnly", "customer_view") == {"Privacy"}
    assert mortgage.values_of_requirement("R_Afford30", "customer_view") == set()


def test_requirements_of_value(mortgage):
    assert mortgage.requirements_of_value("Fairness", "between_customers") == {"R_SimilarSameDecision", "R_Parity"}
    assert mortgage.requirements_of_value("Privacy", "customer_view") == {"R_TaxFieldsOnly"}
    assert mortgage.requirements_of_value("Fairness", "over_time") == {"R_Drift"}


def test_spec_without_edges_reaches_nothing():
    spec = GlassBoxSpec("e", values=(Value("V", "v"),), contexts=(Context("C", ""),))
    assert spec.requirements_of_value("V", "C") == set()
    assert spec.value_context_pairs() == []


def test_unknown_ids(mortgage):
    with pytest.raises(UnknownIdError):
        mortgage.values_of_requirement("R_Nope", "customer_view")
    with pytest.raises(UnknownIdError):
        mortgage.requirements_of_value("Fairness", "nowhere")


CYCLE = """glassbox c {
  value V "v";
  context C "c";
  norm N1 "" { counts_as N2 in C; counts_as V in C; }
  norm N2 "" { counts_as N1 in C; }
  requirement R { kind field_whitelist; for_the_sake_of N1; section in; allow x; }
}
"""


def test_cycle_is_an_error_naming_both_norms():
    diags = [d for d in validate_hierarchy(parse_spec(CYCLE)) if d.code == "cycle"]
    assert diags and diags[0].is_error
    assert {"N1", "N2"} <= set(diags[0].elements)


def test_requirement_without_edge_is_unreachable():
    spec = parse_spec(
        'glassbox u { value V "v"; context C "c"; norm N "" { counts_as V in C; }\n'
        "  requirement R { kind field_whitelist; section in; allow x; } }"
    )
    codes = {d.code for d in validate_hierarchy(spec) if d.is_error}
    assert "unreachable-requirement" in codes


def test_dangling_norm_is_a_warning():
    spec = parse_spec('glassbox d { value V "v"; context C "c"; norm N "" { counts_as V in C; } }')
    diags = validate_hierarchy(spec)
    assert not [d for d in diags if d.is_error]
    assert any(d.code == "dangling-norm" and not d.is_error for d in diags)


def test_empty_value_description_is_an_error():
    spec = parse_spec('glassbox d { value V; context C "c"; }')
    assert any(d.is_error for d in validate_hierarchy(spec))


def test_multi_level_hierarchy_needs_matching_contexts():
    spec = parse_spec(
        """glassbox m {
  value V "v";
  context C1 "";
  context C2 "";
  norm Top "" { counts_as V in C1; counts_as V in C2; }
  norm Low "" { counts_as Top in C1; }
  requirement R { kind field_whitelist; for_the_sake_of Low; section in; allow x; }
}"""
    )
    assert spec.values_of_requirement("R", "C1") == {"V"}
    assert spec.values_of_requirement("R", "C2") == set()
    assert spec.counts_as_path("Low", "V", "C1") == ["Low", "Top", "V"]


@pytest.mark.parametrize("seed", range(40))
def test_duality_and_dag(seed):
    spec = random_spec(random.Random(seed))
    assert not [d for d in validate_hierarchy(spec) if d.is_error]
    graph: dict[str, set[str]] = {}
    for e in spec.counts_as:
        for s in e.sources:
            graph.setdefault(e.target, set()).add(s)
    for r in spec.requirements:
        for n in r.for_the_sake_of:
            graph.setdefault(n, set()).add(r.id)
    tuple(TopologicalSorter(graph).static_order())  # raises on a cycle
    for r in spec.requirements:
        for v in spec.values:
            for c in spec.contexts:
                assert (r.id in spec.requirements_of_value(v.id, c.id)) == (v.id in spec.values_of_requirement(r.id, c.id))


@pytest.mark.parametrize("seed", range(40))
def test_interpretation_leaves_are_active_norms(seed):
    spec = random_spec(random.Random(seed))
    for interp in spec.interpretations:
        active = set(spec.norms_of_value(interp.value, interp.context))
        assert set(formula_leaves(interp.formula)) <= active


def test_inactive_interpretation_leaf_is_reported():
    spec = parse_spec(
        """glassbox i {
  value V "v";
  context C "";
  context D "";
  norm A "" { counts_as V in C; }
  norm B "" { counts_as V in D; }
  interpretation V in C = A and B;
}"""
    )
    assert any(d.code == "inactive-norm" for d in validate_hierarchy(spec))
