import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo acceptance verdicts after the run; capture hides them mid-test."""
    for name in ("test_acceptance", "tests.test_acceptance"):
        module = sys.modules.get(name)
        lines = getattr(module, "VERDICT_LINES", None)
        if lines:
            terminalreporter.section("acceptance verdicts")
            for line in lines:
                terminalreporter.write_line(line)
            return
