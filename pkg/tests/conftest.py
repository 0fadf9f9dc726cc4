"""Shared pytest hooks.

The acceptance tests register one summary line per criterion; echoing them
in the terminal summary keeps the pass/fail verdicts visible even though
pytest captures stdout.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
