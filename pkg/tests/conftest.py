import os
from importlib import resources
from pathlib import Path

import hypothesis
import pytest

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.load_profile(os.environ.get("ORVICON_HYPOTHESIS_PROFILE", "ci"))


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("orvicon") / "scenarios" / f"{name}.json"))


@pytest.fixture
def corner_frost_path():
    return scenario_path("corner_frost")


@pytest.fixture
def control_path():
    return scenario_path("no_frost_control")


@pytest.fixture
def adversarial_path():
    return scenario_path("adversarial")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion; the test still asserts."""
    state = {"detail": ""}
    yield state
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"{'PASS' if ok else 'FAIL'}  {state.get('name', request.node.name)}  {state['detail']}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
