"""Shared pytest plumbing: an acceptance-line registry.

Acceptance tests register one human-readable verdict line each; the
terminal summary reprints them all at the end of the run so the
pass/fail ledger is visible even when pytest captures stdout.
"""

ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance results")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
