import pytest

_verdicts = {}


@pytest.fixture
def verdict():
    """Record a one-line pass/fail for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail):
        _verdicts[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        print(_verdicts[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_verdicts):
            terminalreporter.write_line(_verdicts[number])
