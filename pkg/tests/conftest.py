"""Shared test plumbing: the acceptance suite prints one line per criterion."""

from acceptance_report import results


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in results:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}")
