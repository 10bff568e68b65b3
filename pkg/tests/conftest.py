"""Shared test plumbing: the acceptance-criteria scoreboard.

Acceptance tests record one line per criterion through the `criterion`
fixture; the terminal-summary hook prints the scoreboard after the run so
the pass/fail lines survive pytest's output capture.
"""

import pytest

_SCOREBOARD = []


@pytest.fixture
def criterion():
    def record(num, label, checks, detail=""):
        failing = sorted(k for k, v in checks.items() if not v)
        verdict = "PASS" if not failing else "FAIL"
        line = f"{verdict} criterion {num:2d} {label}"
        if detail:
            line += f"  [{detail}]"
        if failing:
            line += "  failing: " + ", ".join(failing)
        _SCOREBOARD.append(line)
        assert not failing, f"criterion {num} ({label}) failed checks: {failing}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _SCOREBOARD:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_SCOREBOARD):
        terminalreporter.write_line(line)
