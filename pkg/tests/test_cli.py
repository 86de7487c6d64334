from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from glassbox import __version__
from glassbox.cli import EXIT_INPUT, EXIT_NONADHERENT, EXIT_OK, EXIT_USAGE, main
from glassbox.generator import GeneratorConfig, simulate


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    try:
        code = main(list(argv), out, err)
    except SystemExit as exc:
        code = exc.code
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def traces(tmp_path_factory):
    d = tmp_path_factory.mktemp("traces")
    clean = d / "clean.jsonl"
    simulate(GeneratorConfig(events=1500, seed=42)).write(clean)
    dirty = d / "dirty.jsonl"
    simulate(GeneratorConfig(events=1500, seed=42, inject={"R_Afford30": 5, "R_SimilarSameDecision": 2})).write(dirty)
    empty = d / "empty.jsonl"
    empty.write_text("")
    return {"clean": clean, "dirty": dirty, "empty": empty, "dir": d}


CYCLIC = """
glassbox loop {
  schema { in x: int; }
  value V; context C;
  norm N1 obligation { counts_as N2 in C; counts_as V in C; }
  norm N2 obligation { counts_as N1 in C; }
  requirement R { kind per_event; for_the_sake_of N1; then in.x > 0; }
}
"""


def test_validate(mortgage_path, tmp_path):
    code, out, _ = run("validate", mortgage_path)
    assert code == EXIT_OK and "2 values, 4 contexts, 6 norms, 8 requirements" in out
    bad = tmp_path / "loop.gbx"
    bad.write_text(CYCLIC)
    code, _, err = run("validate", str(bad))
    assert code == EXIT_USAGE and "N1" in err and "N2" in err
    assert run("validate", str(tmp_path / "missing.gbx"))[0] == EXIT_INPUT


def test_fmt_is_a_fixed_point(mortgage_path, tmp_path):
    code, text, _ = run("fmt", mortgage_path)
    assert code == EXIT_OK
    p = tmp_path / "canon.gbx"
    p.write_text(text)
    assert run("fmt", str(p))[1] == text


def test_check_clean_trace(mortgage_path, traces, tmp_path):
    report = tmp_path / "r.json"
    code, out, _ = run("check", "--spec", mortgage_path, "--trace", str(traces["clean"]), "--report", str(report))
    assert code == EXIT_OK
    record = json.loads(report.read_text())
    assert record["adheres"] and all(v["adheres"] for v in record["values"])
    assert record["trace"]["events"] == 1500 and record["version"] == __version__
    assert "Fairness" in out


def test_check_injected_trace_matches_sidecar(mortgage_path, traces, tmp_path):
    report = tmp_path / "r.json"
    code, _, _ = run("check", "--spec", mortgage_path, "--trace", str(traces["dirty"]), "--report", str(report))
    assert code == EXIT_NONADHERENT
    record = json.loads(report.read_text())
    truth = [json.loads(x) for x in (traces["dir"] / "dirty.jsonl.truth.jsonl").read_text().splitlines()]
    reported = {(e, r["id"]) for r in record["requirements"] for e in r["violating_events"]}
    assert reported == {(t["event"], t["req"]) for t in truth}


def test_check_empty_trace(mortgage_path, traces):
    code, out, _ = run("check", "--spec", mortgage_path, "--trace", str(traces["empty"]))
    assert code == EXIT_OK
    record = json.loads(out)
    assert all(v["vacuous"] for v in record["values"])
    windowed = [r for r in record["requirements"] if r["kind"] != "per_event" and r["kind"] != "field_whitelist"]
    assert windowed and all(r["state"] == "pending" for r in windowed)


def test_check_reads_stdin(mortgage_path, traces):
    proc = subprocess.run(
        [sys.executable, "-m", "glassbox", "check", "--spec", mortgage_path, "--trace", "-"],
        input=traces["dirty"].read_bytes(),
        capture_output=True,
    )
    assert proc.returncode == EXIT_NONADHERENT
    assert json.loads(proc.stdout)["trace"]["events"] == 1500


def test_check_writes_verdicts(mortgage_path, traces, tmp_path):
    v = tmp_path / "v.jsonl"
    run("check", "--spec", mortgage_path, "--trace", str(traces["clean"]), "--verdicts", str(v))
    rows = [json.loads(x) for x in v.read_text().splitlines()]
    assert len(rows) == 1500 * 7 + 1
    assert rows == sorted(rows, key=lambda r: (r["pos"], r["req"]))


def test_budget_warning(mortgage_path, traces):
    code, out, err = run("check", "--spec", mortgage_path, "--trace", str(traces["clean"]), "--budget", "1000")
    assert code == EXIT_OK
    assert "exceeds budget 1000" in err
    assert "exceeds budget" in " ".join(json.loads(out)["warnings"])
    assert "budget" not in run("check", "--spec", mortgage_path, "--trace", str(traces["clean"]), "--budget", "10000000")[2]


@pytest.mark.parametrize(
    "flags",
    [["--policy", "ratio"], ["--theta", "0.1"], ["--policy", "ratio", "--theta", "2"], ["--policy", "ratio", "--theta", "abc"], ["--jobs", "0"]],
)
def test_policy_usage_errors(mortgage_path, traces, flags):
    assert run("check", "--spec", mortgage_path, "--trace", str(traces["clean"]), *flags)[0] == EXIT_USAGE


def test_ratio_policy_can_accept_rare_violations(mortgage_path, traces):
    code, out, _ = run("check", "--spec", mortgage_path, "--trace", str(traces["dirty"]), "--policy", "ratio", "--theta", "1/10")
    assert code == EXIT_OK
    assert json.loads(out)["policy"] == {"mode": "ratio", "theta": "1/10"}


def test_check_input_errors(mortgage_path, traces, tmp_path):
    assert run("check", "--spec", mortgage_path, "--trace", str(tmp_path / "nope.jsonl"))[0] == EXIT_INPUT
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"id": "e1", "ts": 1, "in": {}, "out": {}}\n{"oops"\n')
    assert run("check", "--spec", mortgage_path, "--trace", str(broken))[0] == EXIT_INPUT
    bad = tmp_path / "loop.gbx"
    bad.write_text(CYCLIC)
    assert run("check", "--spec", str(bad), "--trace", str(traces["clean"]))[0] == EXIT_USAGE


def test_strict_schema_halts_on_faults(mortgage_path, tmp_path):
    t = tmp_path / "t.jsonl"
    t.write_text('{"id": "e1", "ts": 1, "in": {"age": "old"}, "out": {}}\n')
    assert run("check", "--spec", mortgage_path, "--trace", str(t))[0] in (EXIT_OK, EXIT_NONADHERENT)
    assert run("check", "--spec", mortgage_path, "--trace", str(t), "--strict-schema")[0] == EXIT_INPUT


@pytest.fixture(scope="module")
def reports(mortgage_path, traces):
    out = {}
    for name in ("clean", "dirty"):
        path = traces["dir"] / f"{name}.report.json"
        run("check", "--spec", mortgage_path, "--trace", str(traces[name]), "--report", str(path))
        out[name] = path
    return out


def test_explain_all_pairs(reports):
    code, out, _ = run("explain", str(reports["clean"]))
    assert code == EXIT_OK
    heads = [line.split(":")[0] for line in out.splitlines() if "in context" in line]
    assert heads == [
        "Fairness in context bank_vs_customer",
        "Fairness in context between_customers",
        "Fairness in context over_time",
        "Privacy in context customer_view",
    ]


def test_explain_lists_injected_ids(reports, traces):
    code, out, _ = run("explain", str(reports["dirty"]), "Fairness", "between_customers")
    assert code == EXIT_OK and "DOES NOT ADHERE" in out
    truth = [json.loads(x) for x in (traces["dir"] / "dirty.jsonl.truth.jsonl").read_text().splitlines()]
    for t in truth:
        if t["req"] == "R_SimilarSameDecision":
            assert t["event"] in out


def test_explain_clean_privacy(reports):
    code, out, _ = run("explain", str(reports["clean"]), "Privacy", "customer_view")
    assert code == EXIT_OK and "ADHERES" in out and "0 violations" in out


def test_explain_errors(reports, tmp_path):
    assert run("explain", str(reports["clean"]), "Honesty", "customer_view")[0] == EXIT_USAGE
    assert run("explain", str(reports["clean"]), "Privacy", "nowhere")[0] == EXIT_USAGE
    assert run("explain", str(reports["clean"]), "Privacy")[0] == EXIT_USAGE
    assert run("explain", str(tmp_path / "none.json"))[0] == EXIT_INPUT


def test_explain_known_pair_without_norms(reports):
    code, out, _ = run("explain", str(reports["clean"]), "Privacy", "over_time")
    assert code == EXIT_OK and "vacuously" in out


def test_simulate(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"events": 1000, "seed": 42, "inject": {"R_SimilarSameDecision": 5}}))
    out1, out2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("simulate", str(cfg), str(out1))[0] == EXIT_OK
    assert run("simulate", str(cfg), str(out2))[0] == EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()
    assert len((tmp_path / "a.jsonl.truth.jsonl").read_text().splitlines()) == 5


def test_simulate_empty_and_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"events": 0}))
    assert run("simulate", str(cfg), str(tmp_path / "t.jsonl"))[0] == EXIT_OK
    assert (tmp_path / "t.jsonl").read_text() == ""
    cfg.write_text(json.dumps({"events": 10, "inject": {"R_Unknown": 1}}))
    assert run("simulate", str(cfg), str(tmp_path / "t.jsonl"))[0] == EXIT_INPUT
    assert run("simulate", str(tmp_path / "none.json"), str(tmp_path / "t.jsonl"))[0] == EXIT_INPUT


def test_version_and_usage():
    code, out, _ = run("--version")
    assert code == 0
    assert run()[0] == EXIT_USAGE
    assert run("frobnicate")[0] == EXIT_USAGE
    assert run("check", "--spec", "x")[0] == EXIT_USAGE
