import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record one acceptance result line; all lines are echoed at the end."""
    def record(text):
        _ACCEPTANCE_LINES.append(text)
        print(text)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
