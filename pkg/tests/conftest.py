"""Shared test plumbing: the acceptance-gate summary block."""

import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Sink for one PASS/FAIL line per acceptance gate."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance gates")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
