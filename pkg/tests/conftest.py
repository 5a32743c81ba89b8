"""Suite-level reporting: the acceptance tests register one human-readable
pass line per criterion, echoed after the run so they survive pytest's
output capture."""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
