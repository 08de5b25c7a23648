"""Shared test plumbing.

The acceptance tests report one human-readable PASS/FAIL line each; the
lines are echoed again in a terminal section after the run so they stay
visible even when pytest captures per-test output.
"""

import pytest

_verdicts: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print a one-line verdict; returns the boolean unchanged."""

    def record(ok: bool, label: str, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _verdicts.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance verdicts")
        for line in _verdicts:
            terminalreporter.line(line)
