from __future__ import annotations

import copy
import sys

import pytest

from isacsim.scenario import load_scenario, validate_doc


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines.items()):
        terminalreporter.write_line(line)


@pytest.fixture
def scenario_variant():
    """Return a validated copy of a bundled scenario after applying ``edit(doc)``."""

    def make(name, edit=None):
        doc = copy.deepcopy(dict(load_scenario(name).doc))
        if edit is not None:
            edit(doc)
        return validate_doc(doc)

    return make
