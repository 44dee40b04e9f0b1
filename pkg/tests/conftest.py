"""Shared pytest hooks.

The acceptance suite registers one status line per criterion; they are
echoed in a dedicated section of the terminal summary so they are visible
regardless of output capture.
"""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
