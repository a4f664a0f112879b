"""Test-session plumbing: surface the acceptance verdicts in the run summary."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
