import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, text: str) -> None:
        VERDICTS[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {text}"
        print(VERDICTS[number])
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
