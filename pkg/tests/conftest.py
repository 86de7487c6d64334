from __future__ import annotations

import pytest

from glassbox.generator import load_mortgage_spec, mortgage_spec_path
from glassbox.trace import Event


@pytest.fixture(scope="session")
def mortgage():
    return load_mortgage_spec()


@pytest.fixture(scope="session")
def mortgage_path():
    return str(mortgage_spec_path())


def make_event(pos=0, inp=None, out=None, env=None, id=None, ts=None):
    return Event(id or f"e{pos}", pos if ts is None else ts, dict(inp or {}), dict(out or {}), dict(env or {}), pos)


def simulated_events(spec, sim):
    """Parse a simulation's records through the trace reader."""
    from glassbox.trace import read_trace

    return list(read_trace(list(sim.trace_lines()), spec.schema))


# Acceptance criteria report one summary line each at the end of the run.
_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def measured(request):
    """Collects measurements for the criterion summary line."""
    notes: list[str] = []
    request.node.user_properties.append(("measured", notes))
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    notes = next((v for k, v in item.user_properties if k == "measured"), [])
    _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", title, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title, notes = _CRITERIA[number]
        line = f"criterion {number} {verdict}: {title}"
        if notes:
            line += f" ({notes})"
        terminalreporter.write_line(line)
