"""Shared pytest wiring.

The acceptance tests append one verdict line per criterion to
``ACCEPTANCE_LINES``; the terminal summary hook below prints the block after
the run so the verdicts are visible in ordinary pytest output.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
