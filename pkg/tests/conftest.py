import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import pytest

VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one acceptance line; it is echoed live and again in the summary."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
